"""Dense tensors with tape-recorded reverse-mode differentiation.

Operations record onto the innermost active :class:`Tape`. Outside a tape
nothing is recorded, which is how inference runs without bookkeeping cost.

Broadcasting is deliberately narrow: operands must have equal shapes, or one
of them must be a 0-d scalar. Row-wise bias addition goes through the
explicit :func:`broadcast_rows`.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# Relative-error tolerances for gradient checks, per precision.
GRAD_TOL = {np.dtype(np.float64): 1e-4, np.dtype(np.float32): 1e-2}


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class Tensor:
    """An n-dimensional array that can take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


class _Node:
    __slots__ = ("kind", "inputs", "output", "backward")

    def __init__(self, kind, inputs, output, backward):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of operations, replayed in reverse by :meth:`backward`.

    Use as a context manager; nested tapes shadow outer ones.
    """

    _stack: list["Tape | None"] = []

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def current(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def backward(self, output: Tensor, seed: float = 1.0) -> None:
        """Accumulate d(output)/d(leaf) into every leaf tensor's ``grad``."""
        if output.data.size != 1 or output.data.ndim > 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
        if not any(node.output is output for node in self.nodes):
            raise ValueError("output was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(output): np.full(output.shape, seed, dtype=output.dtype)}
        produced = set()
        for node in reversed(self.nodes):
            produced.add(id(node.output))
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        leaves = _collect_leaves(self.nodes, produced)
        for t in leaves:
            g = grads.get(id(t))
            if g is None:
                continue
            if t.grad is None:
                t.grad = np.array(g, dtype=t.dtype, copy=True)
            else:
                t.grad += g


def _collect_leaves(nodes, produced) -> list[Tensor]:
    seen = set()
    out = []
    for node in nodes:
        for inp in node.inputs:
            if inp.requires_grad and id(inp) not in produced and id(inp) not in seen:
                seen.add(id(inp))
                out.append(inp)
    return out


@contextmanager
def no_grad():
    """Suspend recording, even inside an active tape."""
    Tape._stack.append(None)
    try:
        yield
    finally:
        Tape._stack.pop()


def backward(output: Tensor, tape: Tape) -> None:
    tape.backward(output)


def _check_finite(arr: np.ndarray, kind: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{kind} produced non-finite values")


def _record(kind: str, inputs: Sequence[Tensor], out_data: np.ndarray, bwd: Callable) -> Tensor:
    _check_finite(out_data, kind)
    needs = any(t.requires_grad for t in inputs)
    tape = Tape.current()
    out = Tensor(out_data, requires_grad=needs and tape is not None)
    if out.requires_grad:
        tape.nodes.append(_Node(kind, tuple(inputs), out, bwd))
    return out


def _same_or_scalar(a: Tensor, b: Tensor, kind: str) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# --- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. ``b`` may be a vector (matrix-vector product)."""
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def bwd(g):
        if B.ndim == 1:
            return np.outer(g, B), A.T @ g
        return g @ B.T, A.T @ g

    return _record("matmul", (a, b), A @ B, bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError("transpose needs a matrix")
    return _record("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


# --- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_or_scalar(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record("add", (a, b), a.data + b.data, lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_or_scalar(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record("sub", (a, b), a.data - b.data, lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_or_scalar(a, b, "mul")
    A, B = a.data, b.data
    return _record("mul", (a, b), A * B,
                   lambda g: (_reduce_to(g * B, A.shape), _reduce_to(g * A, B.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = a.data > 0
    return _record("relu", (a,), np.where(mask, a.data, 0.0).astype(a.dtype), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _record("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _record("square", (a,), x * x, lambda g: (2.0 * x * g,))


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise NonFiniteError("log of non-positive value")
    return _record("log", (a,), np.log(x), lambda g: (g / x,))


def elementwise(kind: str, *args, **kwargs) -> Tensor:
    """Dispatch by name: relu, tanh, sigmoid, square, add, sub, mul, scale."""
    table = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "square": square,
             "add": add, "sub": sub, "mul": mul, "scale": scale}
    if kind not in table:
        raise ValueError(f"unknown elementwise op {kind!r}")
    return table[kind](*args, **kwargs)


# --- reductions and normalisation -------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record("sum", (a,), np.asarray(a.data.sum()), lambda g: (np.broadcast_to(g, shape).copy(),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    if x.data.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("softmax of an empty tensor")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record("softmax", (x,), y, bwd)


def log_softmax(x: Tensor) -> Tensor:
    if x.data.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("log_softmax of an empty tensor")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def bwd(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _record("log_softmax", (x,), y, bwd)


# --- structural -------------------------------------------------------------

def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DimensionError("concat of nothing")
    nd = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != nd:
            raise DimensionError("concat: mixed ranks")
        if nd == 2 and p.shape[1 - axis] != parts[0].shape[1 - axis]:
            raise DimensionError(f"concat: off-axis extents differ {p.shape} vs {parts[0].shape}")
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _record("concat", tuple(parts), np.concatenate([p.data for p in parts], axis=axis), bwd)


def split(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    """Inverse of :func:`concat` for vectors."""
    if sum(sizes) != x.shape[0]:
        raise DimensionError(f"split sizes {sizes} do not cover {x.shape[0]}")
    out, start = [], 0
    for s in sizes:
        out.append(index(x, slice(start, start + s)))
        start += s
    return out


def index(x: Tensor, idx) -> Tensor:
    """Basic indexing (ints and slices); gradient scatters back."""
    shape, dtype = x.shape, x.dtype

    def bwd(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] += g
        return (full,)

    return _record("index", (x,), np.array(x.data[idx], copy=True), bwd)


def gather_rows(x: Tensor, cols: Sequence[int]) -> Tensor:
    """``out[t] = x[t, cols[t]]`` for a (T, V) matrix."""
    if x.data.ndim != 2 or len(cols) != x.shape[0]:
        raise DimensionError(f"gather_rows: {x.shape} with {len(cols)} indices")
    rows = np.arange(len(cols))
    cols = np.asarray(cols, dtype=np.int64)
    if cols.size and (cols.min() < 0 or cols.max() >= x.shape[1]):
        raise IndexError("gather_rows: index out of range")
    shape, dtype = x.shape, x.dtype

    def bwd(g):
        full = np.zeros(shape, dtype=dtype)
        full[rows, cols] = g
        return (full,)

    return _record("gather_rows", (x,), x.data[rows, cols].copy(), bwd)


def column(w: Tensor, k: int) -> Tensor:
    """Column ``k`` of a matrix: the one-hot product ``W e_k`` as a lookup."""
    if w.data.ndim != 2:
        raise DimensionError("column lookup needs a matrix")
    if not 0 <= k < w.shape[1]:
        raise IndexError(f"column {k} out of range for {w.shape[1]} columns")
    return index(w, (slice(None), k))


def stack(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into an (n, d) matrix."""
    if not rows:
        raise DimensionError("stack of nothing")
    d = rows[0].shape
    for r in rows:
        if r.shape != d or r.data.ndim != 1:
            raise DimensionError("stack needs equal-length vectors")

    def bwd(g):
        return tuple(g[i] for i in range(len(rows)))

    return _record("stack", tuple(rows), np.stack([r.data for r in rows]), bwd)


def mean_rows(xs: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of a non-empty list of equal-shape tensors."""
    if not xs:
        raise ValueError("mean_rows of an empty list")
    shape = xs[0].shape
    for x in xs:
        if x.shape != shape:
            raise DimensionError("mean_rows: shapes differ")
    if len(xs) == 1:
        return xs[0]
    n = len(xs)
    out = np.mean([x.data for x in xs], axis=0)
    return _record("mean_rows", tuple(xs), out, lambda g: tuple(g / n for _ in range(n)))


def mean_axis0(m: Tensor) -> Tensor:
    """Mean over the rows of a matrix."""
    n = m.shape[0]
    return _record("mean_axis0", (m,), m.data.mean(axis=0),
                   lambda g: (np.broadcast_to(g / n, m.shape).copy(),))


def broadcast_rows(v: Tensor, n: int) -> Tensor:
    """Tile a vector into ``n`` identical rows."""
    if v.data.ndim != 1:
        raise DimensionError("broadcast_rows needs a vector")
    return _record("broadcast_rows", (v,), np.tile(v.data, (n, 1)), lambda g: (g.sum(axis=0),))


# --- randomness -------------------------------------------------------------

class SeededRng:
    """PCG64 generator; Gaussian draws use numpy's ziggurat transform.

    Identical seeds give identical draw sequences on every platform numpy
    supports.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, std: float = 1.0, dtype=np.float64) -> np.ndarray:
        return (self._gen.standard_normal(shape) * std).astype(dtype)

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, p: np.ndarray) -> int:
        """Draw one index from a probability vector by inverse CDF."""
        u = self._gen.random()
        c = np.cumsum(p)
        k = int(np.searchsorted(c, u * c[-1], side="right"))
        return min(k, len(p) - 1)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, offset: int) -> "SeededRng":
        return SeededRng(self.seed * 1_000_003 + offset)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


# --- gradient oracle --------------------------------------------------------

def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
                      kink_skip: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``kink_skip`` returns a boolean mask of coordinates to exclude, e.g.
    ``lambda v: np.abs(v) < 10 * h`` for an input feeding a relu directly.
    """
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        out = f(x)
    tape.backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    numeric = numerical_grad(lambda: f(x).item(), x.data, h)
    skip = np.zeros(x.shape, bool) if kink_skip is None else kink_skip(x.data)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    err = np.abs(analytic - numeric) / denom
    err[skip] = 0.0
    return float(err.max()) if err.size else 0.0


def numerical_grad(fn: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn`` with respect to ``arr``, perturbed in place."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
