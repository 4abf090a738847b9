"""Tests for the reconstruction decoder and masked-patch loss."""

import numpy as np
import pytest

from seasonmim import autodiff as ad
from seasonmim.autodiff import ShapeError, Tape, Tensor, backward
from seasonmim.decoder import (DecoderConfig, ReconError, decode,
                               init_decoder_params, mim_loss,
                               normalize_patch_targets, total_pretrain_loss)
from seasonmim.gradcheck import finite_difference_check
from seasonmim.masking import make_mask_plan

ENC_DIM = 12
PATCH_DIM = 8
CFG = DecoderConfig(depth=1, dim=8, heads=2)


def make_params(seed=0):
    params = {}
    init_decoder_params(params, "dec", CFG, ENC_DIM, PATCH_DIM,
                        np.random.default_rng(seed))
    return params


class TestDecode:
    def test_output_rows_are_masked_slots(self):
        plan = make_mask_plan(16, 1, 0.75, seed=0)
        params = make_params()
        h = Tensor(np.random.default_rng(1).standard_normal((4, ENC_DIM)))
        pred = decode(h, plan, 0, CFG, params, "dec")
        assert pred.shape == (12, PATCH_DIM)

    def test_visible_count_checked(self):
        plan = make_mask_plan(16, 1, 0.75, seed=0)
        params = make_params()
        with pytest.raises(ReconError):
            decode(Tensor(np.zeros((5, ENC_DIM))), plan, 0, CFG, params, "dec")

    def test_gradient_reaches_encoder_features(self):
        plan = make_mask_plan(16, 1, 0.75, seed=2)
        params = make_params()
        h = Tensor(np.random.default_rng(3).standard_normal((4, ENC_DIM)),
                   requires_grad=True)
        target = np.random.default_rng(4).standard_normal((12, PATCH_DIM))
        with Tape() as tape:
            loss = mim_loss(decode(h, plan, 0, CFG, params, "dec"), target)
            backward(tape, loss)
        assert np.all(np.abs(h.grad).sum(axis=1) > 0)

    def test_decode_gradient_matches_fd(self):
        plan = make_mask_plan(16, 1, 0.75, seed=5)
        params = make_params()
        h = Tensor(np.random.default_rng(6).standard_normal((4, ENC_DIM)),
                   requires_grad=True)
        target = np.random.default_rng(7).standard_normal((12, PATCH_DIM))

        def fn(h_in):
            return mim_loss(decode(h_in, plan, 0, CFG, params, "dec"), target)

        assert finite_difference_check(fn, [h]) < 1e-4

    def test_mask_token_gradient_flows(self):
        plan = make_mask_plan(16, 1, 0.75, seed=8)
        params = make_params()
        h = Tensor(np.random.default_rng(9).standard_normal((4, ENC_DIM)))
        target = np.random.default_rng(10).standard_normal((12, PATCH_DIM))
        with Tape() as tape:
            loss = mim_loss(decode(h, plan, 0, CFG, params, "dec"), target)
            backward(tape, loss)
        assert np.max(np.abs(params["dec.mask_token"].grad)) > 0

    def test_seasons_use_their_own_masks(self):
        plan = make_mask_plan(16, 2, 0.75, seed=11)
        params = make_params()
        h = Tensor(np.random.default_rng(12).standard_normal((4, ENC_DIM)))
        a = decode(h, plan, 0, CFG, params, "dec")
        b = decode(h, plan, 1, CFG, params, "dec")
        assert not np.array_equal(a.data, b.data)


class TestLoss:
    def test_hand_case(self):
        # one patch [1, 2, 3, 4]: per-patch standardization gives
        # (x - 2.5)/std with var = 1.25, and a zero prediction yields
        # mean(target^2) = var/var = 1 (up to the epsilon in the std)
        target = np.array([[1.0, 2.0, 3.0, 4.0]])
        loss = mim_loss(Tensor(np.zeros((1, 4))), target)
        assert abs(loss.item() - 1.0) < 1e-6

    def test_perfect_prediction_is_zero(self):
        target = np.random.default_rng(13).standard_normal((5, 8))
        pred = Tensor(normalize_patch_targets(target))
        assert mim_loss(pred, target).item() < 1e-20

    def test_locality(self):
        # the loss depends only on masked-slot predictions: changing one
        # prediction row changes the loss, and the gradient w.r.t. any row
        # touches only that row's entries
        target = np.random.default_rng(14).standard_normal((3, 4))
        pred = Tensor(np.zeros((3, 4)), requires_grad=True)
        with Tape() as tape:
            backward(tape, mim_loss(pred, target))
        g = pred.grad.copy()
        # analytic gradient of mean((p - t)^2): 2 (p - t) / size
        t_norm = normalize_patch_targets(target)
        np.testing.assert_allclose(g, 2 * (0 - t_norm) / 12, atol=1e-12)

    def test_unnormalized_mode(self):
        target = np.array([[1.0, 2.0, 3.0, 4.0]])
        loss = mim_loss(Tensor(np.zeros((1, 4))), target,
                        normalize_target=False)
        assert abs(loss.item() - np.mean(target ** 2)) < 1e-12

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            mim_loss(Tensor(np.zeros((2, 4))), np.zeros((3, 4)))

    def test_empty_target_raises(self):
        with pytest.raises(ReconError):
            mim_loss(Tensor(np.zeros((0, 4))), np.zeros((0, 4)))

    def test_normalize_patch_targets_standardizes(self):
        t = np.random.default_rng(15).standard_normal((6, 16)) * 3 + 2
        z = normalize_patch_targets(t)
        np.testing.assert_allclose(z.mean(axis=1), 0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=1), 1, atol=1e-4)

    def test_total_is_plain_sum(self):
        terms = [Tensor(np.array(float(v))) for v in (1.0, 2.5, -0.5)]
        assert total_pretrain_loss(terms).item() == pytest.approx(3.0)
        with pytest.raises(ReconError):
            total_pretrain_loss([])
