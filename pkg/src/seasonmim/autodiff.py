"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every primitive validates shapes, checks for non-finite values, and records
itself on the active :class:`Tape` when any input requires gradients. The tape
is rebuilt per forward pass (define-by-run); backward replays it in reverse.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an op."""


class NonFiniteError(ArithmeticError):
    """Raised when an op produces or receives NaN/Inf values."""


class TapeError(RuntimeError):
    """Raised on invalid backward requests (non-scalar loss, loss off-tape)."""


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: non-finite values encountered")


class Tensor:
    """Shaped float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self.data.ravel()

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.shape != ():
            raise ShapeError(f"item: tensor has shape {self.data.shape}, not scalar")
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class TapeEntry:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _result(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...],
            backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    _check_finite(out_data, op)
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = needs_grad
    out.grad = None
    tape = active_tape()
    if needs_grad and tape is not None:
        tape.entries.append(TapeEntry(op, inputs, out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable on the tape.

    Leaves that appear on the tape but do not influence ``loss`` receive a
    zero gradient.
    """
    if loss.data.shape != ():
        raise TapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    produced = {id(e.output) for e in tape.entries}
    if id(loss) not in produced:
        raise TapeError("backward: loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for entry in reversed(tape.entries):
        g_out = grads.pop(id(entry.output), None)
        if g_out is None:
            continue
        g_ins = entry.backward_fn(g_out)
        for t, g in zip(entry.inputs, g_ins):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g

    seen: set[int] = set()
    for entry in tape.entries:
        for t in entry.inputs:
            if id(t) in seen or not t.requires_grad or id(t) in produced:
                continue
            seen.add(id(t))
            g = grads.get(id(t))
            t.grad = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return _result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    return _result("mul", a.data * b.data, (a, b),
                   lambda g, ad=a.data, bd=b.data: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    if not math.isfinite(c):
        raise NonFiniteError("scale: non-finite constant")
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape[1]} and {b.shape[0]} differ")
    return _result("matmul", a.data @ b.data, (a, b),
                   lambda g, ad=a.data, bd=b.data: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expects 2-D operand, got {a.shape}")
    return _result("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def add_row(a: Tensor, v: Tensor) -> Tensor:
    """Add a length-d row vector to every row of an (n, d) matrix."""
    if a.data.ndim != 2 or v.data.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ShapeError(f"add_row: shapes {a.shape} and {v.shape} incompatible")
    return _result("add_row", a.data + v.data, (a, v),
                   lambda g: (g, g.sum(axis=0)))


def mul_row(a: Tensor, v: Tensor) -> Tensor:
    """Multiply every row of an (n, d) matrix by a length-d vector."""
    if a.data.ndim != 2 or v.data.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ShapeError(f"mul_row: shapes {a.shape} and {v.shape} incompatible")
    return _result("mul_row", a.data * v.data, (a, v),
                   lambda g, ad=a.data, vd=v.data: (g * vd, (g * ad).sum(axis=0)))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with row-max subtraction."""
    if a.data.ndim < 1:
        raise ShapeError("softmax: expects at least 1-D input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g, y=y):
        return ((g - (g * y).sum(axis=-1, keepdims=True)) * y,)

    return _result("softmax", y, (a,), bw)


_LN_EPS = 1e-12


def layer_norm(a: Tensor) -> Tensor:
    """Pre-affine layer norm over the last axis (mean 0, variance 1)."""
    if a.data.ndim < 1 or a.shape[-1] < 2:
        raise ShapeError(f"layer_norm: needs last axis >= 2, got {a.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    y = xc * inv

    def bw(g, y=y, inv=inv, d=a.shape[-1]):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _result("layer_norm", y, (a,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation (the same form the gradient checks use)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def bw(g, x=x, t=t):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * dy,)

    return _result("gelu", y, (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result("sum_all", np.asarray(a.data.sum()), (a,),
                   lambda g: (np.broadcast_to(g, shape).astype(np.float64),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise ShapeError("mean_all: empty tensor")
    shape = a.shape
    return _result("mean_all", np.asarray(a.data.mean()), (a,),
                   lambda g: (np.broadcast_to(g / n, shape).astype(np.float64),))


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows of an (n, d) matrix, returned as shape (1, d)."""
    if a.data.ndim != 2 or a.shape[0] == 0:
        raise ShapeError(f"mean_rows: expects non-empty 2-D input, got {a.shape}")
    n = a.shape[0]
    return _result("mean_rows", a.data.mean(axis=0, keepdims=True), (a,),
                   lambda g, n=n: (np.tile(g / n, (n, 1)),))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows: no operands")
    width = parts[0].shape[-1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[1] != width:
            raise ShapeError(f"concat_rows: width mismatch ({p.shape} vs d={width})")
    sizes = [p.shape[0] for p in parts]
    offs = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[offs[i]:offs[i + 1]] for i in range(len(sizes)))

    return _result("concat_rows", np.concatenate([p.data for p in parts], axis=0),
                   tuple(parts), bw)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= start <= stop <= a.shape[0]):
        raise ShapeError(f"slice_rows: [{start}:{stop}] invalid for shape {a.shape}")

    def bw(g, shape=a.shape):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _result("slice_rows", a.data[start:stop].copy(), (a,), bw)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols: no operands")
    height = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != height:
            raise ShapeError(f"concat_cols: height mismatch ({p.shape} vs n={height})")
    sizes = [p.shape[1] for p in parts]
    offs = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[:, offs[i]:offs[i + 1]] for i in range(len(sizes)))

    return _result("concat_cols", np.concatenate([p.data for p in parts], axis=1),
                   tuple(parts), bw)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= start <= stop <= a.shape[1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] invalid for shape {a.shape}")

    def bw(g, shape=a.shape):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _result("slice_cols", a.data[:, start:stop].copy(), (a,), bw)


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"gather_rows: expects 2-D input and 1-D index, got {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")

    def bw(g, shape=a.shape, idx=idx):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result("gather_rows", a.data[idx].copy(), (a,), bw)


def tile_rows(a: Tensor, n: int) -> Tensor:
    """Repeat a (1, d) row n times to give an (n, d) matrix."""
    if a.data.ndim != 2 or a.shape[0] != 1 or n < 1:
        raise ShapeError(f"tile_rows: expects (1, d) input and n >= 1, got {a.shape}, n={n}")
    return _result("tile_rows", np.tile(a.data, (n, 1)), (a,),
                   lambda g: (g.sum(axis=0, keepdims=True),))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer labels against row-softmax of logits."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.data.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeError("softmax_cross_entropy: label out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def bw(g, p=np.exp(logp), labels=labels, n=n):
        d = p.copy()
        d[np.arange(n), labels] -= 1.0
        return (g * d / n,)

    return _result("softmax_cross_entropy", np.asarray(loss), (logits,), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b broadcast over rows). Composite, not a primitive."""
    y = matmul(x, w)
    if b is not None:
        y = add_row(y, b)
    return y
