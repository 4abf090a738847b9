"""Tests for patch tokenization and positional encodings."""

import numpy as np
import pytest

from seasonmim.autodiff import ShapeError, Tape, Tensor, backward
from seasonmim import autodiff as ad
from seasonmim.embedding import (init_learnable_position_embedding,
                                 patch_count, patch_embed, patchify,
                                 sinusoidal_position_embedding, unpatchify)


class TestPatchify:
    def test_round_trip(self):
        img = np.random.default_rng(0).standard_normal((3, 16, 24))
        rows = patchify(img, 8)
        assert rows.shape == (2 * 3, 3 * 64)
        np.testing.assert_array_equal(unpatchify(rows, 3, 16, 24, 8), img)

    def test_row_major_grid_order(self):
        # constant-per-patch image: row k of the output is patch (k//gw, k%gw)
        img = np.zeros((1, 16, 16))
        for i in range(2):
            for j in range(2):
                img[0, i * 8:(i + 1) * 8, j * 8:(j + 1) * 8] = i * 2 + j
        rows = patchify(img, 8)
        np.testing.assert_array_equal(rows.mean(axis=1), [0, 1, 2, 3])

    def test_indivisible_raises(self):
        with pytest.raises(ShapeError):
            patchify(np.zeros((1, 10, 16)), 8)
        with pytest.raises(ShapeError):
            patch_count(10, 16, 8)

    def test_patch_count(self):
        assert patch_count(32, 32, 8) == 16
        assert patch_count(64, 32, 16) == 8


class TestPatchEmbed:
    def test_linear_projection_shape_and_grad(self):
        rng = np.random.default_rng(2)
        img = rng.standard_normal((2, 16, 16))
        w = Tensor(rng.standard_normal((2 * 64, 5)), requires_grad=True)
        b = Tensor(np.zeros(5), requires_grad=True)
        with Tape() as tape:
            tokens = patch_embed(img, w, b, 8)
            assert tokens.shape == (4, 5)
            backward(tape, ad.sum_all(tokens))
        # d(sum tokens)/dw = rows^T @ ones
        rows = patchify(img, 8)
        np.testing.assert_allclose(w.grad, rows.T @ np.ones((4, 5)), rtol=1e-12)

    def test_projection_dim_mismatch(self):
        img = np.zeros((2, 16, 16))
        w = Tensor(np.zeros((99, 5)))
        b = Tensor(np.zeros(5))
        with pytest.raises(ShapeError):
            patch_embed(img, w, b, 8)


class TestPositionEmbeddings:
    def test_sinusoidal_shape_and_determinism(self):
        a = sinusoidal_position_embedding(16, 64)
        b = sinusoidal_position_embedding(16, 64)
        assert a.shape == (16, 64)
        np.testing.assert_array_equal(a, b)

    def test_sinusoidal_known_values(self):
        table = sinusoidal_position_embedding(4, 4)
        # position 0: sin(0)=0, cos(0)=1 interleaved
        np.testing.assert_allclose(table[0], [0, 1, 0, 1], atol=1e-15)
        # position 1, dim pair 0: frequency 1
        np.testing.assert_allclose(table[1, 0], np.sin(1.0))
        np.testing.assert_allclose(table[1, 1], np.cos(1.0))

    def test_sinusoidal_rows_distinct(self):
        table = sinusoidal_position_embedding(64, 64)
        dists = np.linalg.norm(table[:, None] - table[None, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        assert dists.min() > 1e-3

    def test_sinusoidal_odd_dim_raises(self):
        with pytest.raises(ShapeError):
            sinusoidal_position_embedding(8, 7)

    def test_learnable_table_is_trainable_and_seeded(self):
        a = init_learnable_position_embedding(8, 16, np.random.default_rng(5))
        b = init_learnable_position_embedding(8, 16, np.random.default_rng(5))
        assert a.requires_grad
        np.testing.assert_array_equal(a.data, b.data)
        assert np.std(a.data) < 0.1  # small init
