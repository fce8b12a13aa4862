"""Dense float64 tensors, a reverse-mode gradient tape, and labeled random streams.

Everything downstream (networks, trainer, rewards) runs on these three pieces.
The tape records primitive ops in execution order and replays their
vector-Jacobian products in reverse; it is rebuilt for every training step.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "RngStream",
    "tensor",
    "as_array",
    "concat",
    "matmul",
    "take_rows",
    "draw_gaussian",
    "no_recording",
]

_MASK64 = (1 << 64) - 1

# Active tape for the current run context. Single-threaded by contract.
_ACTIVE: "Tape | None" = None


def _require_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


class Tensor:
    """Dense n-dimensional array of float64 scalars, row-major.

    Construct external data through :func:`tensor`, which rejects NaN/Inf.
    Results of primitive operations are wrapped directly without re-checking.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        self.data = data

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # -- arithmetic sugar; every path funnels into the recorded primitives --

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("tensor division is only defined by a scalar")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def square(self) -> "Tensor":
        return square(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def norm2(self) -> "Tensor":
        """L2 norm, recorded through sqrt(sum(square))."""
        return sqrt(tsum(square(self)))


def tensor(values, copy: bool = True) -> Tensor:
    """Create a Tensor from external data; rejects non-finite entries."""
    arr = np.array(values, dtype=np.float64, copy=copy)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor: input contains NaN or Inf")
    return Tensor(arr)


def as_array(x) -> np.ndarray:
    """Unwrap a Tensor or coerce array-like input to a float64 ndarray."""
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


@dataclass
class _Record:
    out: Tensor
    parents: tuple[Tensor, ...]
    vjps: tuple[Callable[[np.ndarray], np.ndarray], ...]


class Tape:
    """Ordered log of primitive operations plus the parameters to differentiate.

    Nodes are appended in execution order, which is a topological order by
    construction. ``backward`` walks the log in reverse and accumulates
    gradients for every watched parameter, returning zeros for parameters the
    root never touched.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._watched: list[Tensor] = []
        self._outer: "Tape | None" = None

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            self._watched.append(t)

    def __enter__(self) -> "Tape":
        global _ACTIVE
        self._outer = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = self._outer
        self._outer = None

    def _record(self, out, parents, vjps) -> None:
        self._records.append(_Record(out, parents, vjps))

    def backward(self, root: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradients of a scalar root with respect to every watched tensor."""
        if root.size != 1:
            raise ValueError(f"backward: root must be scalar, got shape {root.shape}")
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for rec in reversed(self._records):
            g = grads.get(id(rec.out))
            if g is None:
                continue
            for parent, vjp in zip(rec.parents, rec.vjps):
                contrib = vjp(g)
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = contrib
                else:
                    grads[id(parent)] = acc + contrib
        out: dict[Tensor, np.ndarray] = {}
        for p in self._watched:
            g = grads.get(id(p))
            out[p] = np.zeros_like(p.data) if g is None else g
        return out


class no_recording:
    """Context manager that suspends tape recording (e.g. target construction)."""

    def __enter__(self):
        global _ACTIVE
        self._saved = _ACTIVE
        _ACTIVE = None
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = self._saved


def _emit(value: np.ndarray, parents: tuple[Tensor, ...], vjps) -> Tensor:
    out = Tensor(value)
    if _ACTIVE is not None:
        _ACTIVE._record(out, parents, vjps)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_check(a.data, b.data, "add")
    val = a.data + b.data
    return _emit(val, (a, b), (
        lambda g, sh=a.shape: _unbroadcast(g, sh),
        lambda g, sh=b.shape: _unbroadcast(g, sh),
    ))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_check(a.data, b.data, "sub")
    val = a.data - b.data
    return _emit(val, (a, b), (
        lambda g, sh=a.shape: _unbroadcast(g, sh),
        lambda g, sh=b.shape: _unbroadcast(-g, sh),
    ))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_check(a.data, b.data, "mul")
    val = a.data * b.data
    return _emit(val, (a, b), (
        lambda g, o=b.data, sh=a.shape: _unbroadcast(g * o, sh),
        lambda g, o=a.data, sh=b.shape: _unbroadcast(g * o, sh),
    ))


def scale(a, c: float) -> Tensor:
    a = _lift(a)
    c = float(c)
    return _emit(a.data * c, (a,), (lambda g: g * c,))


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    val = a.data @ b.data
    return _emit(val, (a, b), (
        lambda g, o=b.data: g @ o.T,
        lambda g, o=a.data: o.T @ g,
    ))


def tsum(a) -> Tensor:
    a = _lift(a)
    val = np.asarray(a.data.sum())
    return _emit(val, (a,), (lambda g, sh=a.shape: np.broadcast_to(g, sh).copy(),))


def tmean(a) -> Tensor:
    a = _lift(a)
    n = a.size
    val = np.asarray(a.data.mean())
    return _emit(val, (a,), (lambda g, sh=a.shape, n=n: np.broadcast_to(g / n, sh).copy(),))


def square(a) -> Tensor:
    a = _lift(a)
    return _emit(a.data * a.data, (a,), (lambda g, x=a.data: g * (2.0 * x),))


def sqrt(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data < 0.0):
        raise ValueError("sqrt: negative input")
    root = np.sqrt(a.data)
    return _emit(root, (a,), (lambda g, r=root: g / (2.0 * np.maximum(r, 1e-300)),))


def tanh(a) -> Tensor:
    a = _lift(a)
    val = np.tanh(a.data)
    return _emit(val, (a,), (lambda g, v=val: g * (1.0 - v * v),))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _lift(a)
    val = a.data.reshape(shape)
    return _emit(val, (a,), (lambda g, sh=a.shape: g.reshape(sh),))


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    ts = [_lift(p) for p in parts]
    if not ts:
        raise ValueError("concat: empty input")
    val = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return vjp

    return _emit(val, tuple(ts), tuple(make_vjp(i) for i in range(len(ts))))


def take_rows(table, indices) -> Tensor:
    """Gather rows of a 2-D parameter table; gradients scatter-add back."""
    table = _lift(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2:
        raise ValueError(f"take_rows: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"take_rows: index out of range for table with {table.shape[0]} rows"
        )
    val = table.data[idx]

    def vjp(g, sh=table.shape, idx=idx):
        out = np.zeros(sh)
        np.add.at(out, idx, g)
        return out

    return _emit(val, (table,), (vjp,))


def dot(a, b) -> Tensor:
    """Inner product of two same-shaped tensors."""
    return tsum(mul(a, b))


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

def _label_words(label: str) -> tuple[int, int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return (
        int.from_bytes(digest[0:4], "little"),
        int.from_bytes(digest[4:8], "little"),
    )


@dataclass
class RngStream:
    """Counter-based random stream: (seed, label, counter) fully determines a draw.

    Each draw derives a fresh Philox generator from the triple, so distinct
    labels are independent and replaying a counter replays the exact values
    regardless of what other streams did in between.
    """

    seed: int
    label: str
    counter: int = 0
    _words: tuple[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._words = _label_words(self.label)

    def _generator(self) -> np.random.Generator:
        key = (
            self._words[0],
            self._words[1],
            self.counter & 0xFFFFFFFF,
            (self.counter >> 32) & 0xFFFFFFFF,
        )
        ss = np.random.SeedSequence(entropy=self.seed & _MASK64, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))

    def gaussian(self, shape=()) -> np.ndarray:
        """I.i.d. standard normal entries; advances the counter by one."""
        g = self._generator().standard_normal(shape)
        self.counter += 1
        return g

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = self._generator().uniform(low, high, shape)
        self.counter += 1
        return u

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Uniform integers in [low, high); advances the counter by one."""
        v = self._generator().integers(low, high, size=size)
        self.counter += 1
        return v

    def child(self, suffix: str) -> "RngStream":
        """Derived stream with an extended label and a fresh counter."""
        return RngStream(self.seed, f"{self.label}/{suffix}")


def draw_gaussian(stream: RngStream, shape) -> Tensor:
    """Standard-normal tensor of the given shape drawn from the stream."""
    return Tensor(stream.gaussian(tuple(shape)))
