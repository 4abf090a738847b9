"""Selective token masking: shared across modalities within a season,
independent across seasons."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class MaskPlan:
    """Per-season masked token indices; one plan covers both modalities."""

    masked: tuple[np.ndarray, ...]  # sorted index arrays, one per season
    num_tokens: int
    ratio: float

    def visible(self, t: int) -> np.ndarray:
        keep = np.ones(self.num_tokens, dtype=bool)
        keep[self.masked[t]] = False
        return np.nonzero(keep)[0]


def make_mask_plan(num_tokens: int, t_seasons: int, ratio: float,
                   seed: int) -> MaskPlan:
    """Uniform without-replacement masking per season.

    Each season draws from its own seed substream, so season t's mask does
    not change when more seasons are added.
    """
    if not 0 <= ratio < 1:
        raise MaskError(f"mask ratio must be in [0, 1), got {ratio}")
    n_masked = int(np.floor(ratio * num_tokens + 0.5))  # round half-up
    if n_masked >= num_tokens:
        raise MaskError(
            f"ratio {ratio} leaves no visible tokens for L={num_tokens}")
    masked = []
    for t in range(t_seasons):
        rng = np.random.default_rng(np.random.SeedSequence([417240109, seed, t]))
        idx = rng.choice(num_tokens, size=n_masked, replace=False)
        masked.append(np.sort(idx))
    return MaskPlan(masked=tuple(masked), num_tokens=num_tokens, ratio=ratio)


def apply_mask(tokens: Tensor, plan: MaskPlan, t: int) -> tuple[Tensor, np.ndarray]:
    """Partition tokens into (visible rows in original order, masked indices)."""
    if tokens.shape[0] != plan.num_tokens:
        raise ShapeError(
            f"apply_mask: plan built for L={plan.num_tokens}, "
            f"tokens have {tokens.shape[0]} rows")
    vis_idx = plan.visible(t)
    return ad.gather_rows(tokens, vis_idx), plan.masked[t]
