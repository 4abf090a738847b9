"""Central finite-difference checks for every differentiable primitive.

Each registry entry builds random inputs for one primitive and a scalar
wrapper around it; the checker compares tape gradients against central
differences and reports a norm-relative error per input.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def finite_difference_check(fn: Callable[..., Tensor], inputs: list[Tensor],
                            h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` must map the inputs to a scalar Tensor. Relative error is
    ``||g_ad - g_fd|| / max(||g_ad||, ||g_fd||, 1)`` per input tensor.
    """
    for t in inputs:
        t.zero_grad()
    with ad.Tape() as tape:
        loss = fn(*inputs)
    ad.backward(tape, loss)

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        g_fd = np.zeros_like(t.data)
        flat = t.data.ravel()
        fd_flat = g_fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn(*inputs).item()
            flat[i] = orig - h
            f_minus = fn(*inputs).item()
            flat[i] = orig
            fd_flat[i] = (f_plus - f_minus) / (2 * h)
        g_ad = t.grad if t.grad is not None else np.zeros_like(t.data)
        denom = max(np.linalg.norm(g_ad), np.linalg.norm(g_fd), 1.0)
        worst = max(worst, float(np.linalg.norm(g_ad - g_fd) / denom))
    return worst


def _t(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _weighted(fn):
    """Wrap a matrix-valued op into a scalar via a fixed random weighting."""
    def build(rng):
        return fn(rng)
    return build


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[Tensor]]]:
    """One scalar-valued test case per differentiable primitive."""
    w44 = rng.standard_normal((4, 4))
    w4 = rng.standard_normal(4)
    w84 = rng.standard_normal((8, 4))
    w64 = rng.standard_normal((6, 4))
    labels = rng.integers(0, 4, size=4)
    idx = rng.integers(0, 4, size=6)

    def weigh(x: Tensor, w) -> Tensor:
        return ad.sum_all(ad.mul(x, Tensor(w)))

    cases: dict[str, tuple[Callable, list[Tensor]]] = {
        "add": (lambda a, b: weigh(ad.add(a, b), w44), [_t(rng, 4, 4), _t(rng, 4, 4)]),
        "sub": (lambda a, b: weigh(ad.sub(a, b), w44), [_t(rng, 4, 4), _t(rng, 4, 4)]),
        "mul": (lambda a, b: weigh(ad.mul(a, b), w44), [_t(rng, 4, 4), _t(rng, 4, 4)]),
        "scale": (lambda a: weigh(ad.scale(a, 1.7), w44), [_t(rng, 4, 4)]),
        "matmul": (lambda a, b: weigh(ad.matmul(a, b), w44), [_t(rng, 4, 4), _t(rng, 4, 4)]),
        "transpose": (lambda a: weigh(ad.transpose(a), w44), [_t(rng, 4, 4)]),
        "add_row": (lambda a, v: weigh(ad.add_row(a, v), w44), [_t(rng, 4, 4), _t(rng, 4)]),
        "mul_row": (lambda a, v: weigh(ad.mul_row(a, v), w44), [_t(rng, 4, 4), _t(rng, 4)]),
        "softmax": (lambda a: weigh(ad.softmax(a), w44), [_t(rng, 4, 4)]),
        "layer_norm": (lambda a: weigh(ad.layer_norm(a), w44), [_t(rng, 4, 4)]),
        "gelu": (lambda a: weigh(ad.gelu(a), w44), [_t(rng, 4, 4)]),
        "sum_all": (lambda a: ad.sum_all(a), [_t(rng, 4, 4)]),
        "mean_all": (lambda a: ad.mean_all(a), [_t(rng, 4, 4)]),
        "mean_rows": (lambda a: ad.sum_all(ad.mul(ad.mean_rows(a), Tensor(w4[None, :]))),
                      [_t(rng, 4, 4)]),
        "concat_rows": (lambda a, b: weigh(ad.concat_rows([a, b]), w84),
                        [_t(rng, 4, 4), _t(rng, 4, 4)]),
        "slice_rows": (lambda a: weigh(ad.slice_rows(a, 2, 6), w44), [_t(rng, 8, 4)]),
        "concat_cols": (lambda a, b: weigh(ad.concat_cols([a, b]), w84.T.copy()),
                        [_t(rng, 4, 4), _t(rng, 4, 4)]),
        "slice_cols": (lambda a: weigh(ad.slice_cols(a, 2, 6), w44), [_t(rng, 4, 8)]),
        "gather_rows": (lambda a: weigh(ad.gather_rows(a, idx), w64),
                        [_t(rng, 4, 4)]),
        "tile_rows": (lambda a: weigh(ad.tile_rows(a, 4), w44), [_t(rng, 1, 4)]),
        "softmax_cross_entropy": (lambda a: ad.softmax_cross_entropy(a, labels),
                                  [_t(rng, 4, 4)]),
    }
    return cases


def check_all_primitives(seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Run the finite-difference check once per primitive; returns max errors."""
    rng = np.random.default_rng(seed)
    return {name: finite_difference_check(fn, inputs, h=h)
            for name, (fn, inputs) in primitive_cases(rng).items()}
