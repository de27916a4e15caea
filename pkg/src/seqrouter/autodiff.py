"""Minimal reverse-mode autodiff on numpy arrays.

Tensors carry dense float data; every differentiable op records a backward
closure on the active :class:`Tape`. Recording order is execution order,
which is a valid topological order, so the backward pass just walks the
tape in reverse. Training runs in float32; gradient checks run the same
code in float64.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .rng import RngTree


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class TapeError(RuntimeError):
    """Tape misuse: backward without a tape, or a second backward."""


class GradCheckError(RuntimeError):
    """Non-finite values encountered during a gradient check."""


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Records ops of one forward pass; replays them in reverse for grads."""

    def __init__(self):
        self._nodes: list[Callable[[], None]] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.pop()

    def record(self, backward_fn: Callable[[], None]) -> None:
        self._nodes.append(backward_fn)

    def backward(self, loss: "Tensor") -> None:
        if self._spent:
            raise TapeError("backward() already ran on this tape")
        if loss.data.ndim != 0:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            node()

    @property
    def spent(self) -> bool:
        return self._spent


def _tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tensor:
    """Dense n-dimensional array of reals, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the named functions below do the work.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, other)

    def __radd__(self, other):
        return shift(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -other)

    def __rsub__(self, other):
        return shift(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """A named, trainable tensor. Weight matrices are weight-decayed; biases
    and gains are not."""

    __slots__ = ("name", "decay")

    def __init__(self, data, name: str, decay: bool = True, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.decay = decay

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, decay={self.decay})"


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def check_unique_names(params: Sequence[Parameter]) -> None:
    seen: set[str] = set()
    for p in params:
        if p.name in seen:
            raise ValueError(f"duplicate parameter name: {p.name}")
        seen.add(p.name)


# ---------------------------------------------------------------------------
# op plumbing


def _record(out: Tensor, fn: Callable[[], None]) -> None:
    tape = _tape()
    if tape is not None and out.requires_grad:
        tape.record(fn)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_same_dtype(a: Tensor, b: Tensor) -> None:
    if a.dtype != b.dtype:
        raise ValueError(f"mixed dtypes: {a.dtype} vs {b.dtype}")


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=False)


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    out = Tensor(data, a.requires_grad or b.requires_grad)

    def bwd():
        if out.grad is None:
            return
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(out.grad, b.shape))

    _record(out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    try:
        data = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None
    out = Tensor(data, a.requires_grad or b.requires_grad)

    def bwd():
        if out.grad is None:
            return
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-out.grad, b.shape))

    _record(out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    out = Tensor(data, a.requires_grad or b.requires_grad)

    def bwd():
        if out.grad is None:
            return
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(out.grad * a.data, b.shape))

    _record(out, bwd)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    out = Tensor(a.data * c, a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * c)

    _record(out, bwd)
    return out


def shift(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + a.dtype.type(c), a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad)

    _record(out, bwd)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    out = Tensor(np.matmul(a.data, b.data), a.requires_grad or b.requires_grad)

    def bwd():
        if out.grad is None:
            return
        if a.requires_grad:
            ga = np.matmul(out.grad, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), out.grad)
            b.accumulate_grad(_unbroadcast(gb, b.shape))

    _record(out, bwd)
    return out


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = Tensor(np.transpose(a.data, axes), a.requires_grad)
    inv = tuple(np.argsort(axes))

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(np.transpose(out.grad, inv))

    _record(out, bwd)
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape), a.requires_grad)
    orig = a.shape

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad.reshape(orig))

    _record(out, bwd)
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    req = any(t.requires_grad for t in tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), req)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd():
        if out.grad is None:
            return
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(out.grad[tuple(idx)])

    _record(out, bwd)
    return out


def split(a: Tensor, sizes: Sequence[int], axis: int) -> list[Tensor]:
    if sum(sizes) != a.shape[axis]:
        raise DimensionError(f"split sizes {sizes} do not cover axis of {a.shape}")
    offsets = np.cumsum([0] + list(sizes))
    outs = []
    for lo, hi in zip(offsets[:-1], offsets[1:]):
        idx = [slice(None)] * a.data.ndim
        idx[axis] = slice(lo, hi)
        outs.append(Tensor(a.data[tuple(idx)].copy(), a.requires_grad))

    def bwd():
        if not a.requires_grad:
            return
        g = np.zeros_like(a.data)
        any_grad = False
        for o, lo, hi in zip(outs, offsets[:-1], offsets[1:]):
            if o.grad is not None:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                g[tuple(idx)] = o.grad
                any_grad = True
        if any_grad:
            a.accumulate_grad(g)

    tape = _tape()
    if tape is not None and a.requires_grad:
        tape.record(bwd)
    return outs


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), a.requires_grad)
    mask = a.data > 0

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * mask)

    _record(out, bwd)
    return out


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_np(a.data)
    out = Tensor(y, a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * y * (1.0 - y))

    _record(out, bwd)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * (1.0 - y * y))

    _record(out, bwd)
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y, a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * y)

    _record(out, bwd)
    return out


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):
        out = Tensor(np.log(a.data), a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad / a.data)

    _record(out, bwd)
    return out


def log1p(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):
        out = Tensor(np.log1p(a.data), a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad / (1.0 + a.data))

    _record(out, bwd)
    return out


def logsigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x < 0, x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    out = Tensor(y.astype(x.dtype, copy=False), a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * _sigmoid_np(-x))

    _record(out, bwd)
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            dot = (out.grad * y).sum(axis=-1, keepdims=True)
            a.accumulate_grad(y * (out.grad - dot))

    _record(out, bwd)
    return out


def layernorm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with learned gain and bias."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + a.dtype.type(eps))
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, a.requires_grad or gain.requires_grad or bias.requires_grad)
    n = x.shape[-1]

    def bwd():
        if out.grad is None:
            return
        g = out.grad
        if gain.requires_grad:
            gain.accumulate_grad(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias.accumulate_grad(_unbroadcast(g, bias.shape))
        if a.requires_grad:
            dxhat = g * gain.data
            term = dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            a.accumulate_grad(term * inv)
        del g

    _record(out, bwd)
    return out


def cumsum(a: Tensor, axis: int) -> Tensor:
    out = Tensor(np.cumsum(a.data, axis=axis), a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            g = np.flip(np.cumsum(np.flip(out.grad, axis=axis), axis=axis), axis=axis)
            a.accumulate_grad(g)

    _record(out, bwd)
    return out


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Set entries where ``mask`` is true to ``value``; mask is a constant."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    data = a.data.copy()
    data[mask] = a.dtype.type(value)
    out = Tensor(data, a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(np.where(mask, 0.0, out.grad))

    _record(out, bwd)
    return out


def where_mask(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select: mask ? a : b, with a constant boolean mask."""
    _check_same_dtype(a, b)
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, a.data, b.data), a.requires_grad or b.requires_grad)

    def bwd():
        if out.grad is None:
            return
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(np.where(mask, out.grad, 0.0), a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(np.where(mask, 0.0, out.grad), b.shape))

    _record(out, bwd)
    return out


def take_along(a: Tensor, idx: np.ndarray, axis: int) -> Tensor:
    """Gather along an axis with a constant integer index array."""
    idx = np.asarray(idx)
    out_data = np.take_along_axis(a.data, idx, axis=axis)
    out = Tensor(out_data, a.requires_grad)
    idx_b = np.broadcast_to(idx, out_data.shape)

    def bwd():
        if out.grad is not None and a.requires_grad:
            g = np.zeros_like(a.data)
            grids = list(np.indices(out.grad.shape, sparse=True))
            grids[axis] = idx_b
            np.add.at(g, tuple(grids), out.grad)
            a.accumulate_grad(g)

    _record(out, bwd)
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= table.shape[0]:
        raise ValueError(f"embedding ids out of range [0, {table.shape[0]})")
    out = Tensor(table.data[ids], table.requires_grad)

    def bwd():
        if out.grad is not None and table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, ids, out.grad)
            table.accumulate_grad(g)

    _record(out, bwd)
    return out


def dropout(a: Tensor, rate: float, gen: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    keep = (gen.random(a.shape) >= rate).astype(a.dtype)
    factor = keep / a.dtype.type(1.0 - rate)
    out = Tensor(a.data * factor, a.requires_grad)

    def bwd():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * factor)

    _record(out, bwd)
    return out


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)

    def bwd():
        if out.grad is None or not a.requires_grad:
            return
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis=axis)
        a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    _record(out, bwd)
    return out


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy of (B, C) logits against integer targets (B,)."""
    targets = np.asarray(targets)
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy expects (batch, classes) logits, got {logits.shape}")
    b, c = logits.shape
    if targets.shape != (b,):
        raise DimensionError(f"targets shape {targets.shape} does not match batch {b}")
    if targets.min() < 0 or targets.max() >= c:
        raise ValueError(f"target class out of range [0, {c})")
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=-1, keepdims=True)
    logp = (x - m) - np.log(z)
    nll = -logp[np.arange(b), targets].mean()
    out = Tensor(np.asarray(nll, dtype=x.dtype), logits.requires_grad)

    def bwd():
        if out.grad is not None and logits.requires_grad:
            p = e / z
            p[np.arange(b), targets] -= 1.0
            logits.accumulate_grad(p * (out.grad / b))

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# parameter init


class Init:
    """Builds named Parameters with per-parameter random streams.

    Linear weights draw from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in));
    biases start at a constant (zero unless stated otherwise).
    """

    def __init__(self, rng: RngTree, dtype=np.float32, prefix: str = ""):
        self.rng = rng
        self.dtype = dtype
        self.prefix = prefix

    def sub(self, name: str) -> "Init":
        joined = f"{self.prefix}.{name}" if self.prefix else name
        return Init(self.rng, self.dtype, joined)

    def _name(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def linear(self, name: str, fan_in: int, fan_out: int) -> Parameter:
        bound = 1.0 / math.sqrt(fan_in)
        gen = self.rng.child(f"init/{self._name(name)}").generator()
        data = gen.uniform(-bound, bound, size=(fan_in, fan_out)).astype(self.dtype)
        return Parameter(data, self._name(name), decay=True)

    def bias(self, name: str, shape, value: float = 0.0) -> Parameter:
        data = np.full(shape, value, dtype=self.dtype)
        return Parameter(data, self._name(name), decay=False)

    def gain(self, name: str, shape, value: float = 1.0) -> Parameter:
        data = np.full(shape, value, dtype=self.dtype)
        return Parameter(data, self._name(name), decay=False)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn: Callable[[Sequence[Tensor]], Tensor], points: Sequence[Tensor], step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps the given tensors to a scalar Tensor and must be
    deterministic. Points must be float64 or wider; extended precision
    keeps the difference quotient meaningful on coordinates whose true
    gradient is structurally tiny.
    """
    for p in points:
        if not np.issubdtype(p.dtype, np.floating) or p.data.itemsize < 8:
            raise ValueError("grad_check requires float64 or wider inputs")
        p.grad = None
        p.requires_grad = True

    with Tape() as tape:
        loss = fn(points)
        tape.backward(loss)
    if not np.isfinite(loss.data):
        raise GradCheckError("loss is not finite at the given point")
    analytic = []
    for p in points:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise GradCheckError("analytic gradient has non-finite entries")
        analytic.append(g.copy())

    worst = 0.0
    for p, g in zip(points, analytic):
        flat = p.data.reshape(-1)
        h = p.dtype.type(step)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn(points).data
            flat[i] = orig - h
            f_minus = fn(points).data
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            if not np.isfinite(numeric):
                raise GradCheckError("numeric gradient is not finite")
            a = g.reshape(-1)[i]
            rel = float(abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12))
            worst = max(worst, rel)
    return worst
