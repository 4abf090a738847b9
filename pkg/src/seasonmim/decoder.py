"""Modality-specific decoders and the masked-patch reconstruction loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .embedding import sinusoidal_position_embedding
from .encoder import EncoderConfig, Params, init_block_params, run_blocks, \
    trunc_normal, xavier_uniform
from .masking import MaskPlan

_TARGET_EPS = 1e-6


class ReconError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    depth: int = 4
    dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    normalize_target: bool = True

    def blocks_config(self) -> EncoderConfig:
        return EncoderConfig(depth=self.depth, heads=self.heads,
                             embed_dim=self.dim, mlp_ratio=self.mlp_ratio)


def init_decoder_params(params: Params, prefix: str, cfg: DecoderConfig,
                        encoder_dim: int, patch_dim: int,
                        rng: np.random.Generator) -> None:
    """One decoder parameter set per modality, shared across seasons."""
    cfg.blocks_config().validate()
    params[f"{prefix}.proj.w"] = Tensor(xavier_uniform(rng, (encoder_dim, cfg.dim)),
                                        requires_grad=True)
    params[f"{prefix}.proj.b"] = Tensor(np.zeros(cfg.dim), requires_grad=True)
    params[f"{prefix}.mask_token"] = Tensor(trunc_normal(rng, (1, cfg.dim)),
                                            requires_grad=True)
    for i in range(cfg.depth):
        init_block_params(params, f"{prefix}.block{i}", cfg.blocks_config(), rng)
    params[f"{prefix}.norm.g"] = Tensor(np.ones(cfg.dim), requires_grad=True)
    params[f"{prefix}.norm.b"] = Tensor(np.zeros(cfg.dim), requires_grad=True)
    params[f"{prefix}.head.w"] = Tensor(xavier_uniform(rng, (cfg.dim, patch_dim)),
                                        requires_grad=True)
    params[f"{prefix}.head.b"] = Tensor(np.zeros(patch_dim), requires_grad=True)


def decode(h_visible: Tensor, plan: MaskPlan, t: int, cfg: DecoderConfig,
           params: Params, prefix: str) -> Tensor:
    """Predict pixel patches at the masked slots of season t.

    The full token sequence is rebuilt by scattering visible features and
    inserting the learned mask token, positional embeddings are added, the
    decoder blocks run, and only masked-slot head outputs are returned
    (rows in ascending masked-index order).
    """
    masked_idx = plan.masked[t]
    vis_idx = plan.visible(t)
    if h_visible.shape[0] != vis_idx.size:
        raise ReconError(
            f"decode: {h_visible.shape[0]} visible rows but plan expects "
            f"{vis_idx.size} for season {t}")
    x = ad.linear(h_visible, params[f"{prefix}.proj.w"], params[f"{prefix}.proj.b"])

    # permutation mapping token slot -> row in [visible | mask tokens]
    perm = np.empty(plan.num_tokens, dtype=np.intp)
    perm[vis_idx] = np.arange(vis_idx.size)
    perm[masked_idx] = vis_idx.size + np.arange(masked_idx.size)
    stacked = ad.concat_rows([x, ad.tile_rows(params[f"{prefix}.mask_token"],
                                              masked_idx.size)])
    full = ad.gather_rows(stacked, perm)

    pos = Tensor(sinusoidal_position_embedding(plan.num_tokens, cfg.dim))
    full = ad.add(full, pos)
    full = run_blocks(full, params, prefix, cfg.blocks_config())
    full = ad.add_row(ad.mul_row(ad.layer_norm(full), params[f"{prefix}.norm.g"]),
                      params[f"{prefix}.norm.b"])
    pred = ad.linear(full, params[f"{prefix}.head.w"], params[f"{prefix}.head.b"])
    return ad.gather_rows(pred, masked_idx)


def normalize_patch_targets(target: np.ndarray) -> np.ndarray:
    """Standardize each target patch by its own mean and variance."""
    mu = target.mean(axis=1, keepdims=True)
    var = target.var(axis=1, keepdims=True)
    return (target - mu) / np.sqrt(var + _TARGET_EPS)


def mim_loss(pred: Tensor, target_patches: np.ndarray,
             normalize_target: bool = True) -> Tensor:
    """MSE over masked-patch elements only."""
    if target_patches.size == 0:
        raise ReconError("mim_loss: zero masked patches (degenerate objective)")
    if pred.shape != target_patches.shape:
        raise ShapeError(
            f"mim_loss: prediction {pred.shape} vs target {target_patches.shape}")
    target = normalize_patch_targets(target_patches) if normalize_target \
        else target_patches
    diff = ad.sub(pred, Tensor(target))
    return ad.mean_all(ad.mul(diff, diff))


def total_pretrain_loss(terms: list[Tensor]) -> Tensor:
    """Plain sum of all per-season, per-modality reconstruction losses."""
    if not terms:
        raise ReconError("total_pretrain_loss: no loss terms")
    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    return total
