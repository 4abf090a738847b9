"""Unified multimodal transformer encoder (pre-norm ViT blocks).

Visible tokens from both modalities are concatenated along the token axis,
processed jointly by self-attention, and split back per modality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

Params = dict[str, Tensor]


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 4
    heads: int = 4
    embed_dim: int = 64
    mlp_ratio: float = 4.0

    def validate(self) -> None:
        if self.embed_dim % self.heads:
            raise ShapeError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.depth < 0:
            raise ShapeError("depth must be >= 0")


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) resampled into +-2 std (MAE-style token init)."""
    x = rng.standard_normal(shape)
    for _ in range(4):
        bad = np.abs(x) > 2.0
        if not bad.any():
            break
        x[bad] = rng.standard_normal(bad.sum())
    return std * np.clip(x, -2.0, 2.0)


def xavier_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """Fan-scaled uniform init for weight matrices.

    A fixed std (0.02) is only appropriate at large widths; at desk-scale
    widths it attenuates every linear map and with it all content-dependent
    computation, so weight matrices use the fan-scaled Glorot bound instead.
    """
    fan_in, fan_out = shape[0], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _param(params: Params, name: str, value: np.ndarray) -> None:
    params[name] = Tensor(value, requires_grad=True)


def init_attention_params(params: Params, prefix: str, dim: int,
                          rng: np.random.Generator) -> None:
    for proj in ("wq", "wk", "wv", "wo"):
        _param(params, f"{prefix}.{proj}", xavier_uniform(rng, (dim, dim)))
    for bias in ("bq", "bk", "bv", "bo"):
        _param(params, f"{prefix}.{bias}", np.zeros(dim))


def init_block_params(params: Params, prefix: str, cfg: EncoderConfig,
                      rng: np.random.Generator) -> None:
    dim = cfg.embed_dim
    hidden = int(dim * cfg.mlp_ratio)
    _param(params, f"{prefix}.ln1.g", np.ones(dim))
    _param(params, f"{prefix}.ln1.b", np.zeros(dim))
    init_attention_params(params, f"{prefix}.attn", dim, rng)
    _param(params, f"{prefix}.ln2.g", np.ones(dim))
    _param(params, f"{prefix}.ln2.b", np.zeros(dim))
    _param(params, f"{prefix}.mlp.w1", xavier_uniform(rng, (dim, hidden)))
    _param(params, f"{prefix}.mlp.b1", np.zeros(hidden))
    _param(params, f"{prefix}.mlp.w2", xavier_uniform(rng, (hidden, dim)))
    _param(params, f"{prefix}.mlp.b2", np.zeros(dim))


def init_encoder_params(params: Params, prefix: str, cfg: EncoderConfig,
                        rng: np.random.Generator) -> None:
    cfg.validate()
    for i in range(cfg.depth):
        init_block_params(params, f"{prefix}.block{i}", cfg, rng)


def attention_head(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(QK^T / sqrt(d)) V for a single head."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: Q width {q.shape} != K width {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention: K rows {k.shape} != V rows {v.shape}")
    weights = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k)),
                                  1.0 / math.sqrt(q.shape[-1])))
    return ad.matmul(weights, v)


def multi_head_attention(q_in: Tensor, kv_in: Tensor, params: Params,
                         prefix: str, heads: int) -> Tensor:
    dim = q_in.shape[-1]
    if kv_in.shape[-1] != dim:
        raise ShapeError(
            f"attention: query width {dim} != key/value width {kv_in.shape[-1]}")
    q = ad.linear(q_in, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k = ad.linear(kv_in, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v = ad.linear(kv_in, params[f"{prefix}.wv"], params[f"{prefix}.bv"])
    dh = dim // heads
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        outs.append(attention_head(ad.slice_cols(q, lo, hi),
                                   ad.slice_cols(k, lo, hi),
                                   ad.slice_cols(v, lo, hi)))
    joined = outs[0] if heads == 1 else ad.concat_cols(outs)
    return ad.linear(joined, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def _ln_affine(x: Tensor, params: Params, prefix: str) -> Tensor:
    return ad.add_row(ad.mul_row(ad.layer_norm(x), params[f"{prefix}.g"]),
                      params[f"{prefix}.b"])


def transformer_block(x: Tensor, params: Params, prefix: str, heads: int) -> Tensor:
    h = _ln_affine(x, params, f"{prefix}.ln1")
    x = ad.add(x, multi_head_attention(h, h, params, f"{prefix}.attn", heads))
    h = _ln_affine(x, params, f"{prefix}.ln2")
    h = ad.linear(h, params[f"{prefix}.mlp.w1"], params[f"{prefix}.mlp.b1"])
    h = ad.gelu(h)
    h = ad.linear(h, params[f"{prefix}.mlp.w2"], params[f"{prefix}.mlp.b2"])
    return ad.add(x, h)


def run_blocks(x: Tensor, params: Params, prefix: str, cfg: EncoderConfig) -> Tensor:
    for i in range(cfg.depth):
        x = transformer_block(x, params, f"{prefix}.block{i}", cfg.heads)
    return x


def encode(visible_opt: Tensor, visible_sar: Tensor, cfg: EncoderConfig,
           params: Params, prefix: str = "enc") -> tuple[Tensor, Tensor]:
    """Joint encoding of both modalities; returns (F_opt, F_sar)."""
    cfg.validate()
    if visible_opt.shape[-1] != visible_sar.shape[-1]:
        raise ShapeError(
            f"encode: modality widths differ "
            f"({visible_opt.shape[-1]} vs {visible_sar.shape[-1]})")
    n_opt = visible_opt.shape[0]
    joint = ad.concat_rows([visible_opt, visible_sar])
    joint = run_blocks(joint, params, prefix, cfg)
    return (ad.slice_rows(joint, 0, n_opt),
            ad.slice_rows(joint, n_opt, joint.shape[0]))


def encode_single(tokens: Tensor, cfg: EncoderConfig, params: Params,
                  prefix: str = "enc") -> Tensor:
    """Single-sequence encoding (unimodal and siamese strategies)."""
    cfg.validate()
    return run_blocks(tokens, params, prefix, cfg)
