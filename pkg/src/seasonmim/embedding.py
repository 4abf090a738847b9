"""Per-modality patch tokenization and positional encodings."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


def patch_count(crop_h: int, crop_w: int, patch: int) -> int:
    if crop_h % patch or crop_w % patch:
        raise ShapeError(
            f"patch_embed: {crop_h}x{crop_w} not divisible by patch {patch}")
    return (crop_h // patch) * (crop_w // patch)


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """(C, h, w) image -> (L, C*patch*patch) rows in row-major grid order."""
    c, h, w = image.shape
    if h % patch or w % patch:
        raise ShapeError(f"patchify: {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = image.reshape(c, gh, patch, gw, patch)
    x = x.transpose(1, 3, 0, 2, 4)  # (gh, gw, c, p, p)
    return x.reshape(gh * gw, c * patch * patch)


def unpatchify(rows: np.ndarray, channels: int, crop_h: int, crop_w: int,
               patch: int) -> np.ndarray:
    """Inverse of :func:`patchify` for a full (L, C*patch*patch) matrix."""
    gh, gw = crop_h // patch, crop_w // patch
    x = rows.reshape(gh, gw, channels, patch, patch)
    return x.transpose(2, 0, 3, 1, 4).reshape(channels, crop_h, crop_w)


def patch_embed(image: np.ndarray, weight: Tensor, bias: Tensor,
                patch: int) -> Tensor:
    """Tokenize a (C, h, w) image with a per-modality linear projection."""
    rows = patchify(image, patch)
    if rows.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"patch_embed: patch dim {rows.shape[1]} != projection rows "
            f"{weight.shape[0]}")
    return ad.linear(Tensor(rows), weight, bias)


def sinusoidal_position_embedding(length: int, dim: int) -> np.ndarray:
    """Fixed 1-D sin/cos table over geometric frequencies; parameter-free."""
    if dim % 2:
        raise ShapeError(f"sinusoidal embedding needs even dim, got {dim}")
    pos = np.arange(length)[:, None]
    freqs = np.exp(-np.log(10000.0) * np.arange(0, dim, 2) / dim)[None, :]
    table = np.empty((length, dim))
    table[:, 0::2] = np.sin(pos * freqs)
    table[:, 1::2] = np.cos(pos * freqs)
    return table


def init_learnable_position_embedding(length: int, dim: int,
                                      rng: np.random.Generator) -> Tensor:
    return Tensor(0.02 * rng.standard_normal((length, dim)), requires_grad=True)
