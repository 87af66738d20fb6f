"""Dense float64 tensors with reverse-mode differentiation.

Every primitive returns a new immutable :class:`Tensor`. When at least one
operand participates in a graph (a leaf created by :func:`vjp`, or a result
derived from one), the primitive records its parents and a closure that maps
the output cotangent to parent cotangents. :func:`vjp` walks that graph.
"""

from __future__ import annotations

import contextlib
import contextvars
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, NoCheckableCoordinates

__all__ = [
    "Tensor",
    "LinearParams",
    "tensor",
    "matmul",
    "softmax_rows",
    "avg_pool_2d",
    "linear",
    "abs_",
    "relu",
    "sigmoid",
    "sign",
    "scale",
    "add",
    "mul",
    "reduce_mean",
    "soft_threshold",
    "transpose",
    "reshape",
    "take_rows",
    "slice_cols",
    "concat_cols",
    "vjp",
    "grad_check",
    "no_grad",
    "record_kinks",
    "dumps_tensor",
    "loads_tensor",
    "save_tensor",
    "load_tensor",
]

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_kink_log: contextvars.ContextVar[list | None] = contextvars.ContextVar("kink_log", default=None)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


class Tensor:
    """Immutable row-major float64 array.

    ``shape`` holds positive extents; ``data`` is the flat row-major view.
    """

    __slots__ = ("_value", "_parents", "_backward", "_leaf")

    def __init__(self, value, *, _parents: tuple = (), _backward=None, _leaf: bool = False):
        arr = np.array(value, dtype=np.float64) if not isinstance(value, np.ndarray) else value
        if arr.ndim == 0:
            raise DimensionError("tensors need at least one axis")
        if any(n < 1 for n in arr.shape):
            raise DimensionError(f"extents must be positive, got {arr.shape}")
        if arr.dtype != np.float64 or arr.flags.writeable or not arr.flags.c_contiguous:
            arr = _frozen(arr.copy() if arr.flags.writeable else arr)
        self._value = arr
        self._parents = _parents
        self._backward = _backward
        self._leaf = _leaf

    @property
    def value(self) -> np.ndarray:
        return self._value

    @property
    def shape(self) -> tuple[int, ...]:
        return self._value.shape

    @property
    def ndim(self) -> int:
        return self._value.ndim

    @property
    def data(self) -> np.ndarray:
        return self._value.reshape(-1)

    @property
    def tracked(self) -> bool:
        return self._leaf or bool(self._parents)

    def tolist(self):
        return self._value.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={np.array2string(self._value, threshold=20)})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Tensor) and np.array_equal(self._value, other._value)

    __hash__ = None


def tensor(values, shape: Sequence[int] | None = None) -> Tensor:
    """Build a tensor from nested values, or from flat ``values`` plus ``shape``."""
    arr = np.array(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != math.prod(shape):
            raise DimensionError(f"{arr.size} values do not fill shape {shape}")
        arr = arr.reshape(shape)
    return Tensor(arr)


@dataclass(frozen=True)
class LinearParams:
    weight: Tensor  # [in_dim, out_dim]
    bias: Tensor  # [out_dim]

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError(
                f"linear params need weight [in, out] and bias [out], got {self.weight.shape} and {self.bias.shape}"
            )
        if self.weight.shape[1] != self.bias.shape[0]:
            raise DimensionError(f"weight {self.weight.shape} and bias {self.bias.shape} disagree")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def identity(cls, dim: int) -> LinearParams:
        return cls(Tensor(np.eye(dim)), Tensor(np.zeros(dim)))

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int) -> LinearParams:
        return cls(Tensor(np.zeros((in_dim, out_dim))), Tensor(np.zeros(out_dim)))


# --------------------------------------------------------------------------
# graph plumbing


@contextlib.contextmanager
def no_grad():
    """Evaluate primitives without recording a graph."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@contextlib.contextmanager
def record_kinks():
    """Collect ``(kind, active_pattern, margin)`` for every non-smooth primitive evaluated."""
    log: list = []
    token = _kink_log.set(log)
    try:
        yield log
    finally:
        _kink_log.reset(token)


def _log_kink(kind: str, active: np.ndarray, distance: np.ndarray) -> None:
    log = _kink_log.get()
    if log is not None:
        log.append((kind, active, float(np.abs(distance).min())))


def _result(value: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    value = _frozen(value)
    if _grad_enabled.get() and any(p.tracked for p in parents):
        return Tensor(value, _parents=parents, _backward=backward)
    return Tensor(value)


def _check_tensor(x, name: str = "operand") -> Tensor:
    if not isinstance(x, Tensor):
        raise TypeError(f"{name} must be a Tensor, got {type(x).__name__}")
    return x


def _leading_broadcast(x: Tensor, y: Tensor, op: str) -> bool:
    """True when ``y`` broadcasts over the leading axis of ``x``."""
    if x.shape == y.shape:
        return False
    if x.shape[1:] == y.shape:
        return True
    raise DimensionError(f"{op}: cannot broadcast {y.shape} onto {x.shape}")


# --------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    av, bv = a.value, b.value

    def backward(g):
        return g @ bv.T, av.T @ g

    return _result(av @ bv, (a, b), backward)


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got {x.shape}")
    y = x.value - x.value.max(axis=1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (x,), backward)


def _pool_geometry(h: int, w: int, kernel: int, stride: int, pad: int):
    if kernel < 1 or stride < 1 or pad < 0:
        raise DomainError(f"avg_pool_2d: need kernel>=1, stride>=1, pad>=0 (got {kernel}, {stride}, {pad})")
    if kernel > h + 2 * pad or kernel > w + 2 * pad:
        raise DimensionError(f"avg_pool_2d: kernel {kernel} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")
    if pad >= kernel:
        raise DimensionError(f"avg_pool_2d: pad {pad} >= kernel {kernel} leaves windows with no input cells")
    oh = (h + 2 * pad - kernel) // stride + 1
    ow = (w + 2 * pad - kernel) // stride + 1
    top = np.arange(oh) * stride - pad
    left = np.arange(ow) * stride - pad
    rows = np.clip(np.minimum(top + kernel, h) - np.maximum(top, 0), 0, None)
    cols = np.clip(np.minimum(left + kernel, w) - np.maximum(left, 0), 0, None)
    count = (rows[:, None] * cols[None, :]).astype(np.float64)
    return oh, ow, top, left, count


def avg_pool_2d(x: Tensor, kernel: int, stride: int, pad: int) -> Tensor:
    """Per-channel window mean over an [H, W, C] tensor.

    Padding cells are excluded from both sum and divisor. Each window is
    averaged relative to its first in-bounds cell, so constant inputs come
    back bit-exact.
    """
    if x.ndim != 3:
        raise DimensionError(f"avg_pool_2d expects [H, W, C], got {x.shape}")
    h, w, _ = x.shape
    oh, ow, top, left, count = _pool_geometry(h, w, kernel, stride, pad)
    xv = x.value
    ref = xv[np.maximum(top, 0)][:, np.maximum(left, 0)]
    acc = np.zeros_like(ref)
    for dy in range(kernel):
        iy = top + dy
        vy = (iy >= 0) & (iy < h)
        for dx in range(kernel):
            ix = left + dx
            vx = (ix >= 0) & (ix < w)
            valid = (vy[:, None] & vx[None, :])[:, :, None]
            cells = xv[np.clip(iy, 0, h - 1)][:, np.clip(ix, 0, w - 1)]
            acc += np.where(valid, cells - ref, 0.0)
    out = ref + acc / count[:, :, None]

    def backward(g):
        gx = np.zeros_like(xv)
        share = g / count[:, :, None]
        for dy in range(kernel):
            iy = top + dy
            vy = (iy >= 0) & (iy < h)
            for dx in range(kernel):
                ix = left + dx
                vx = (ix >= 0) & (ix < w)
                sy, sx = np.nonzero(vy[:, None] & vx[None, :])
                np.add.at(gx, (iy[sy], ix[sx]), share[sy, sx])
        return (gx,)

    return _result(out, (x,), backward)


def linear(x: Tensor, p: LinearParams) -> Tensor:
    if x.ndim != 2 or x.shape[1] != p.in_dim:
        raise DimensionError(f"linear: input {x.shape} does not match weight {p.weight.shape}")
    xv, wv = x.value, p.weight.value

    def backward(g):
        return g @ wv.T, xv.T @ g, g.sum(axis=0)

    return _result(xv @ wv + p.bias.value, (x, p.weight, p.bias), backward)


def abs_(x: Tensor) -> Tensor:
    xv = x.value
    _log_kink("abs", xv > 0, xv)

    def backward(g):
        return (g * np.sign(xv),)

    return _result(np.abs(xv), (x,), backward)


def relu(x: Tensor) -> Tensor:
    xv = x.value
    _log_kink("relu", xv > 0, xv)

    def backward(g):
        return (g * (xv > 0),)

    return _result(np.maximum(xv, 0.0), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    """1 / (1 + exp(-z)), evaluated without overflow for negative z."""
    z = x.value
    e = np.exp(-np.abs(z))
    y = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), backward)


def sign(x: Tensor) -> Tensor:
    def backward(g):
        return (np.zeros_like(g),)

    return _result(np.sign(x.value), (x,), backward)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        return (g * s,)

    return _result(x.value * s, (x,), backward)


def add(x: Tensor, y: Tensor) -> Tensor:
    bcast = _leading_broadcast(x, y, "add")

    def backward(g):
        return g, (g.sum(axis=0) if bcast else g)

    return _result(x.value + y.value, (x, y), backward)


def mul(x: Tensor, y: Tensor) -> Tensor:
    bcast = _leading_broadcast(x, y, "mul")
    xv, yv = x.value, y.value

    def backward(g):
        gy = g * xv
        return g * yv, (gy.sum(axis=0) if bcast else gy)

    return _result(xv * yv, (x, y), backward)


def reduce_mean(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"reduce_mean: axis {axis} out of range for {x.shape}")
    if x.ndim == 1:
        raise DimensionError("reduce_mean: reducing a 1-D tensor would leave no axes")
    axis %= x.ndim
    n = x.shape[axis]
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape),)

    return _result(x.value.mean(axis=axis), (x,), backward)


def soft_threshold(x: Tensor, tau: Tensor) -> Tensor:
    """sign(x) * max(|x| - tau, 0) with ``tau`` per last-axis channel.

    The derivative with respect to ``x`` is taken as 0 on the closed dead
    zone [-tau, tau].
    """
    tv, xv = tau.value, x.value
    if np.any(tv < 0):
        raise DomainError(f"soft_threshold: negative threshold {tv.min()!r}")
    bcast = _leading_broadcast(x, tau, "soft_threshold")
    mag = np.abs(xv) - tv
    live = mag > 0
    _log_kink("soft_threshold", live, mag)
    out = np.where(live, np.sign(xv) * mag, 0.0)

    def backward(g):
        gx = np.where(live, g, 0.0)
        gt = -np.sign(xv) * gx
        return gx, (gt.sum(axis=0) if bcast else gt)

    return _result(out, (x, tau), backward)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {x.shape}")

    def backward(g):
        return (g.T,)

    return _result(x.value.T, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != math.prod(x.shape):
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return _result(x.value.reshape(shape), (x,), backward)


def take_rows(x: Tensor, index) -> Tensor:
    """Gather rows ``x[index]``; repeated indices accumulate in the backward pass."""
    idx = np.asarray(index, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise DimensionError("take_rows: index must be a non-empty 1-D sequence")
    if idx.min() < 0 or idx.max() >= x.shape[0]:
        raise DimensionError(f"take_rows: index out of range for {x.shape[0]} rows")
    xv = x.value

    def backward(g):
        gx = np.zeros_like(xv)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(xv[idx], (x,), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"slice_cols: [{start}, {stop}) invalid for {x.shape}")
    xv = x.value

    def backward(g):
        gx = np.zeros_like(xv)
        gx[:, start:stop] = g
        return (gx,)

    return _result(xv[:, start:stop], (x,), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    if not parts or any(p.ndim != 2 or p.shape[0] != parts[0].shape[0] for p in parts):
        raise DimensionError("concat_cols: need matrices with equal row counts")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.value for p in parts], axis=1), parts, backward)


# --------------------------------------------------------------------------
# differentiation


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.tracked and id(p) not in seen:
                stack.append((p, False))
    return order


def vjp(fn: Callable[..., Tensor], inputs: Sequence[Tensor], cotangent) -> tuple[Tensor, ...]:
    """Reverse-mode product of ``cotangent`` with the Jacobian of ``fn`` at ``inputs``.

    Returns one cotangent per input, each shaped like that input.
    """
    leaves = [Tensor(_check_tensor(x).value, _leaf=True) for x in inputs]
    token = _grad_enabled.set(True)
    try:
        out = fn(*leaves)
    finally:
        _grad_enabled.reset(token)
    ct = np.asarray(cotangent.value if isinstance(cotangent, Tensor) else cotangent, dtype=np.float64)
    if ct.shape != out.shape:
        raise DimensionError(f"vjp: cotangent {ct.shape} does not match output {out.shape}")

    grads: dict[int, np.ndarray] = {id(out): ct}
    if out.tracked:
        for node in reversed(_toposort(out)):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.tracked:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else np.array(pg, dtype=np.float64)
    return tuple(Tensor(grads.get(id(leaf), np.zeros(leaf.shape))) for leaf in leaves)


def _kink_state(log: list, st_delta: float):
    patterns = [active for _, active, _ in log]
    near = any(kind == "soft_threshold" and margin < st_delta for kind, _, margin in log)
    return patterns, near


def grad_check(
    fn: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-6,
    exclude: Callable[[int], bool] | None = None,
    kink_delta: float = 0.0,
    cotangent=None,
    seed: int = 0,
) -> float:
    """Largest relative gap between the analytic VJP and central differences.

    The scalar probed is ``sum(cotangent * fn(x))``; by default the cotangent
    is drawn from a fixed-seed normal. The gap at flat coordinate ``i`` is
    ``|analytic - numeric| / max(1, |analytic|)``.

    Coordinates are skipped when ``exclude(i)`` is true, or when a
    ``kink_delta`` is set and either the base point puts a soft-threshold
    input within ``kink_delta`` of its kink, or a stencil point flips the
    active side of any non-smooth primitive.
    """
    x = _check_tensor(x, "x")
    with no_grad(), record_kinks() as log:
        y0 = fn(x)
    if cotangent is None:
        cotangent = np.random.default_rng(seed).standard_normal(y0.shape)
    w = np.asarray(cotangent, dtype=np.float64).reshape(-1)
    (analytic,) = vjp(fn, [x], w.reshape(y0.shape))
    analytic = analytic.data

    base_patterns, near = _kink_state(log, kink_delta)
    if kink_delta > 0 and near:
        raise NoCheckableCoordinates("no checkable coordinates: base point lies in a soft-threshold kink band")

    flat = x.data.copy()
    worst, checked = 0.0, 0
    for i in range(flat.size):
        if exclude is not None and exclude(i):
            continue
        probes, skip = [], False
        for step in (h, -h):
            shifted = flat.copy()
            shifted[i] += step
            with no_grad(), record_kinks() as plog:
                probes.append(float(w @ fn(Tensor(shifted.reshape(x.shape))).data))
            if kink_delta > 0:
                patterns, _ = _kink_state(plog, kink_delta)
                if len(patterns) != len(base_patterns) or any(
                    not np.array_equal(a, b) for a, b in zip(patterns, base_patterns)
                ):
                    skip = True
        if skip:
            continue
        numeric = (probes[0] - probes[1]) / (2 * h)
        worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(analytic[i])))
        checked += 1
    if checked == 0:
        raise NoCheckableCoordinates("no checkable coordinates")
    return worst


# --------------------------------------------------------------------------
# text format: {"shape": [...], "data": [...]}


def dumps_tensor(t: Tensor) -> str:
    if not np.all(np.isfinite(t.value)):
        raise DomainError("tensor text format holds finite values only")
    return json.dumps({"shape": list(t.shape), "data": t.data.tolist()})


def loads_tensor(text: str) -> Tensor:
    obj = json.loads(text)
    if not isinstance(obj, dict) or set(obj) != {"shape", "data"}:
        raise ValueError('tensor file must be an object with exactly "shape" and "data"')
    shape, data = obj["shape"], obj["data"]
    if not isinstance(shape, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in shape):
        raise ValueError('"shape" must be an array of integers')
    if not isinstance(data, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in data
    ):
        raise ValueError('"data" must be an array of numbers')
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError('"data" must be finite')
    return tensor(arr, shape)


def save_tensor(t: Tensor, path) -> None:
    with open(path, "w") as f:
        f.write(dumps_tensor(t))
        f.write("\n")


def load_tensor(path) -> Tensor:
    with open(path) as f:
        return loads_tensor(f.read())

