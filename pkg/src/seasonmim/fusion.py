"""Temporal-multimodal fusion: a cross-attention cascade over seasons.

Season 1 fuses the two modalities directly. Later seasons either merge the
previous-season query through a learned 2D->D combiner ("fuse") or run a
second independent cross-attention ("decouple"). One cross-attention
parameter set is shared across modalities and seasons.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .encoder import Params, init_attention_params, multi_head_attention, \
    xavier_uniform


class TMVariant(str, Enum):
    FUSE = "fuse"
    DECOUPLE = "decouple"
    DISABLED = "disabled"


@dataclass(frozen=True)
class TMConfig:
    variant: TMVariant = TMVariant.FUSE
    heads: int = 4
    decouple_combine: str = "mean"  # or "sum"

    def validate(self, dim: int) -> None:
        if dim % self.heads:
            raise ShapeError(f"tm heads {self.heads} do not divide dim {dim}")
        if self.decouple_combine not in ("mean", "sum"):
            raise ShapeError(f"unknown decouple combine '{self.decouple_combine}'")


def init_tm_params(params: Params, prefix: str, cfg: TMConfig, dim: int,
                   rng: np.random.Generator) -> None:
    cfg.validate(dim)
    if cfg.variant is TMVariant.DISABLED:
        return
    init_attention_params(params, f"{prefix}.ca", dim, rng)
    if cfg.variant is TMVariant.FUSE:
        params[f"{prefix}.comb.w"] = Tensor(xavier_uniform(rng, (2 * dim, dim)),
                                            requires_grad=True)
        params[f"{prefix}.comb.b"] = Tensor(np.zeros(dim), requires_grad=True)
    else:
        init_attention_params(params, f"{prefix}.ca2", dim, rng)


def cross_attention(query_tokens: Tensor, kv_tokens: Tensor, params: Params,
                    prefix: str, heads: int) -> Tensor:
    """Pre-norm residual cross-attention layer; output length = query length.

    The residual over the query stream keeps feature magnitude intact at
    small-variance init, which is what makes the fusion block trainable.
    """
    attended = multi_head_attention(ad.layer_norm(query_tokens),
                                    ad.layer_norm(kv_tokens),
                                    params, prefix, heads)
    return ad.add(query_tokens, attended)


def tm_fuse(features: list[tuple[Tensor, Tensor]], cfg: TMConfig,
            params: Params, prefix: str = "tm") -> list[tuple[Tensor, Tensor]]:
    """Fuse per-season (F_opt, F_sar) encoder features across time.

    Output shapes match the inputs; season t depends only on seasons <= t.
    """
    if not features:
        raise ShapeError("tm_fuse: need at least one season")
    dim = features[0][0].shape[-1]
    cfg.validate(dim)
    for f_o, f_r in features:
        if f_o.shape[-1] != dim or f_r.shape[-1] != dim:
            raise ShapeError("tm_fuse: inconsistent feature widths")
    if cfg.variant is TMVariant.DISABLED:
        return list(features)

    ca = f"{prefix}.ca"
    fused: list[tuple[Tensor, Tensor]] = []
    for t, (f_o, f_r) in enumerate(features):
        if t == 0:
            h_o = cross_attention(f_r, f_o, params, ca, cfg.heads)
            h_r = cross_attention(f_o, f_r, params, ca, cfg.heads)
        elif cfg.variant is TMVariant.FUSE:
            prev_o, prev_r = features[t - 1]
            q_o = ad.linear(ad.concat_cols([f_r, prev_o]),
                            params[f"{prefix}.comb.w"], params[f"{prefix}.comb.b"])
            q_r = ad.linear(ad.concat_cols([f_o, prev_r]),
                            params[f"{prefix}.comb.w"], params[f"{prefix}.comb.b"])
            h_o = cross_attention(q_o, f_o, params, ca, cfg.heads)
            h_r = cross_attention(q_r, f_r, params, ca, cfg.heads)
        else:
            prev_o, prev_r = features[t - 1]
            ca2 = f"{prefix}.ca2"
            h_o = _combine(cross_attention(f_r, f_o, params, ca, cfg.heads),
                           cross_attention(prev_o, f_o, params, ca2, cfg.heads),
                           cfg.decouple_combine)
            h_r = _combine(cross_attention(f_o, f_r, params, ca, cfg.heads),
                           cross_attention(prev_r, f_r, params, ca2, cfg.heads),
                           cfg.decouple_combine)
        fused.append((h_o, h_r))
    return fused


def _combine(a: Tensor, b: Tensor, how: str) -> Tensor:
    s = ad.add(a, b)
    return ad.scale(s, 0.5) if how == "mean" else s
