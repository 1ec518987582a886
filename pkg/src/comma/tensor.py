"""Dense float64 tensors with reverse-mode automatic differentiation.

Tensors are immutable values: every operation returns a fresh tensor and
rejects non-finite results (a NaN or Inf anywhere is an error state, never a
value). Operations on tracked tensors record a computation graph;
:func:`backward` replays it and returns vector-Jacobian products for every
named parameter that participated.

Convention used throughout the package: feature vectors are columns, so a
set of N tokens with dimension D is stored as a D x N matrix.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Gradients",
    "tensor",
    "parameter",
    "no_grad",
    "backward",
    "matmul",
    "transpose",
    "reshape",
    "add",
    "sub",
    "mul",
    "relu",
    "linear",
    "mlp2",
    "masked_softmax",
    "mean_over",
    "sum_all",
    "dot",
    "colwise_dot",
    "stack",
    "concat_cols",
    "slice_cols",
    "logsumexp",
    "write_tensor_file",
    "read_tensor_file",
    "TENSOR_FILE_MAGIC",
]

# Gradients map a parameter name to a tensor of the parameter's shape.
Gradients = dict[str, "Tensor"]

# graph recording is toggled per thread so concurrent forward passes
# (e.g. threaded evaluation) cannot clobber each other's state
_grad_state = threading.local()


def _recording() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording (forward values only) within the block."""
    previous = _recording()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def _require_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{op}: non-finite values in result")


class Tensor:
    """Immutable dense float64 array, optionally a node in a computation graph.

    ``name`` is set only on parameters (graph leaves). Interior nodes keep
    references to their parents together with one vector-Jacobian closure per
    parent; that recorded trace is what :func:`backward` consumes.
    """

    __slots__ = ("data", "name", "_parents", "_vjps", "_track")

    def __init__(self, data, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        _require_finite(arr, "tensor")
        arr.setflags(write=False)
        self.data = arr
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()
        self._track = name is not None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents=(), vjps=()) -> "Tensor":
        out = cls.__new__(cls)
        if not data.flags.owndata:
            data = np.array(data)
        data.setflags(write=False)
        out.data = data
        out.name = None
        out._parents = parents
        out._vjps = vjps
        out._track = bool(parents)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data) -> Tensor:
    """Construct a constant (untracked) tensor."""
    return Tensor(data)


def parameter(name: str, data) -> Tensor:
    """Construct a named leaf whose gradient `backward` will report."""
    if not name:
        raise ValueError("parameter needs a non-empty name")
    return Tensor(data, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*operands: Tensor) -> bool:
    return _recording() and any(t._track for t in operands)


# ---------------------------------------------------------------------------
# arithmetic kernels


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "add")
    out = a.data + b.data
    _require_finite(out, "add")
    if not _tracked(a, b):
        return Tensor._from_op(out)
    return Tensor._from_op(
        out, (a, b), (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape))
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "sub")
    out = a.data - b.data
    _require_finite(out, "sub")
    if not _tracked(a, b):
        return Tensor._from_op(out)
    return Tensor._from_op(
        out, (a, b), (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "mul")
    out = a.data * b.data
    _require_finite(out, "mul")
    if not _tracked(a, b):
        return Tensor._from_op(out)
    return Tensor._from_op(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.shape),
            lambda g: _unbroadcast(g * a.data, b.shape),
        ),
    )


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    # Only identical shapes or a scalar operand; the model needs nothing wider.
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    # only size-1 operands broadcast here, so the adjoint is a plain sum
    return np.asarray(g.sum()).reshape(shape)


def matmul(a, b) -> Tensor:
    """2-D matrix product a[m,k] @ b[k,n]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul: expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner extents differ, {a.shape} vs {b.shape}")
    out = a.data @ b.data
    _require_finite(out, "matmul")
    if not _tracked(a, b):
        return Tensor._from_op(out)
    return Tensor._from_op(
        out, (a, b), (lambda g: g @ b.data.T, lambda g: a.data.T @ g)
    )


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose: expects a matrix, got {a.shape}")
    out = np.ascontiguousarray(a.data.T)
    if not _tracked(a):
        return Tensor._from_op(out)
    return Tensor._from_op(out, (a,), (lambda g: np.ascontiguousarray(g.T),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if math.prod(shape) != a.data.size:
        raise ValueError(f"reshape: cannot view {a.shape} as {shape}")
    out = a.data.reshape(shape)
    if not _tracked(a):
        return Tensor._from_op(out)
    return Tensor._from_op(out, (a,), (lambda g: g.reshape(a.shape),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)
    if not _tracked(a):
        return Tensor._from_op(out)
    return Tensor._from_op(out, (a,), (lambda g: g * (a.data > 0.0),))


def linear(x, weight, bias=None) -> Tensor:
    """Affine map ``weight @ x (+ bias)`` for a column vector or token matrix."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if weight.ndim != 2 or x.ndim not in (1, 2):
        raise ValueError(f"linear: bad operand ranks {weight.shape}, {x.shape}")
    if weight.shape[1] != x.shape[0]:
        raise ValueError(f"linear: weight {weight.shape} does not accept input {x.shape}")
    out = weight.data @ x.data
    operands = [weight, x]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + (bias.data[:, None] if x.ndim == 2 else bias.data)
        operands.append(bias)
    _require_finite(out, "linear")
    if not _tracked(*operands):
        return Tensor._from_op(out)

    def d_weight(g):
        return np.outer(g, x.data) if x.ndim == 1 else g @ x.data.T

    def d_x(g):
        return weight.data.T @ g

    vjps = [d_weight, d_x]
    if bias is not None:
        vjps.append(lambda g: g if g.ndim == 1 else g.sum(axis=1))
    return Tensor._from_op(out, tuple(operands), tuple(vjps))


def mlp2(x, w1, b1, w2, b2) -> Tensor:
    """Two-layer perceptron ``w2 @ relu(w1 @ x + b1) + b2``."""
    return linear(relu(linear(x, w1, b1)), w2, b2)


def masked_softmax(logits, mask) -> Tensor:
    """Row-wise softmax over the allowed entries of a binary mask.

    Disallowed entries are excluded from the normalization (their logits are
    driven to -inf) and come out exactly zero. Every row must allow at least
    one entry.
    """
    logits = _as_tensor(logits)
    allowed = np.asarray(getattr(mask, "allowed", mask), dtype=bool)
    if logits.ndim != 2 or allowed.shape != logits.shape:
        raise ValueError(f"masked_softmax: mask {allowed.shape} does not fit logits {logits.shape}")
    if not allowed.any(axis=1).all():
        raise ValueError("masked_softmax: degenerate mask row (no allowed entries)")
    row_max = np.max(logits.data, axis=1, where=allowed, initial=-np.inf, keepdims=True)
    shifted = np.where(allowed, logits.data - row_max, -np.inf)
    weights = np.exp(shifted)
    weights /= weights.sum(axis=1, keepdims=True)
    _require_finite(weights, "masked_softmax")
    if not _tracked(logits):
        return Tensor._from_op(weights)

    def d_logits(g):
        inner = (g * weights).sum(axis=1, keepdims=True)
        return weights * (g - inner)

    return Tensor._from_op(weights, (logits,), (d_logits,))


def mean_over(a, axes: Iterable[int]) -> Tensor:
    """Arithmetic mean over the listed axes (which are removed)."""
    a = _as_tensor(a)
    axes = tuple(sorted(set(int(ax) for ax in axes)))
    if not axes:
        raise ValueError("mean_over: no axes given")
    for ax in axes:
        if not 0 <= ax < a.ndim:
            raise ValueError(f"mean_over: axis {ax} out of range for {a.shape}")
        if a.shape[ax] == 0:
            raise ValueError(f"mean_over: empty extent on axis {ax}")
    out = a.data.mean(axis=axes)
    count = math.prod(a.shape[ax] for ax in axes)
    if not _tracked(a):
        return Tensor._from_op(np.asarray(out))

    def d_a(g):
        expanded = np.expand_dims(g, axes)
        return np.broadcast_to(expanded / count, a.shape).copy()

    return Tensor._from_op(np.asarray(out), (a,), (d_a,))


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.sum())
    if not _tracked(a):
        return Tensor._from_op(out)
    return Tensor._from_op(out, (a,), (lambda g: np.full(a.shape, float(g)),))


def dot(a, b) -> Tensor:
    """Inner product of two equal-length vectors; returns a scalar tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dot: expects equal-length vectors, got {a.shape} and {b.shape}")
    out = np.asarray(a.data @ b.data)
    _require_finite(out, "dot")
    if not _tracked(a, b):
        return Tensor._from_op(out)
    return Tensor._from_op(
        out, (a, b), (lambda g: float(g) * b.data, lambda g: float(g) * a.data)
    )


def colwise_dot(a, b) -> Tensor:
    """Per-column inner products of two D x N matrices; returns length-N vector."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"colwise_dot: expects matching matrices, got {a.shape} and {b.shape}")
    out = np.einsum("ij,ij->j", a.data, b.data)
    _require_finite(out, "colwise_dot")
    if not _tracked(a, b):
        return Tensor._from_op(out)
    return Tensor._from_op(
        out, (a, b), (lambda g: b.data * g[None, :], lambda g: a.data * g[None, :])
    )


def stack(parts: Sequence) -> Tensor:
    """Stack equal-shape tensors along a new leading axis (scalars -> vector)."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("stack: nothing to stack")
    if any(p.shape != parts[0].shape for p in parts):
        raise ValueError("stack: mixed shapes")
    out = np.stack([p.data for p in parts])
    if not _tracked(*parts):
        return Tensor._from_op(out)
    vjps = tuple((lambda g, i=i: g[i]) for i in range(len(parts)))
    return Tensor._from_op(out, tuple(parts), vjps)


def concat_cols(parts: Sequence) -> Tensor:
    """Concatenate matrices with equal row counts along the column axis."""
    parts = [_as_tensor(p) for p in parts]
    if not parts or any(p.ndim != 2 for p in parts):
        raise ValueError("concat_cols: expects a non-empty list of matrices")
    if any(p.shape[0] != parts[0].shape[0] for p in parts):
        raise ValueError("concat_cols: row counts differ")
    out = np.concatenate([p.data for p in parts], axis=1)
    if not _tracked(*parts):
        return Tensor._from_op(out)
    starts = np.cumsum([0] + [p.shape[1] for p in parts])
    vjps = tuple(
        (lambda g, lo=starts[i], hi=starts[i + 1]: g[:, lo:hi]) for i in range(len(parts))
    )
    return Tensor._from_op(out, tuple(parts), vjps)


def slice_cols(a, start: int, stop: int) -> Tensor:
    """Contiguous column slice ``a[:, start:stop]``."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"slice_cols: expects a matrix, got {a.shape}")
    if not 0 <= start <= stop <= a.shape[1]:
        raise ValueError(f"slice_cols: range [{start}, {stop}) invalid for {a.shape}")
    out = np.array(a.data[:, start:stop])
    if not _tracked(a):
        return Tensor._from_op(out)

    def d_a(g):
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        return full

    return Tensor._from_op(out, (a,), (d_a,))


def logsumexp(a, axis: int | None = None) -> Tensor:
    """Numerically stable log(sum(exp(a))) over all entries or one axis."""
    a = _as_tensor(a)
    if axis is None:
        m = a.data.max()
        out = np.asarray(np.log(np.exp(a.data - m).sum()) + m)
        if _tracked(a):
            soft = np.exp(a.data - out)
            return Tensor._from_op(out, (a,), (lambda g: float(g) * soft,))
        return Tensor._from_op(out)
    if not 0 <= axis < a.ndim:
        raise ValueError(f"logsumexp: axis {axis} out of range for {a.shape}")
    m = a.data.max(axis=axis, keepdims=True)
    out = np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True)) + m
    reduced = np.squeeze(out, axis=axis)
    if not _tracked(a):
        return Tensor._from_op(reduced)
    soft = np.exp(a.data - out)

    def d_a(g):
        return soft * np.expand_dims(g, axis)

    return Tensor._from_op(np.asarray(reduced), (a,), (d_a,))


# ---------------------------------------------------------------------------
# reverse pass


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for par in node._parents:
            if par._track and id(par) not in seen:
                stack.append((par, False))
    return order


def backward(output: Tensor, seed=None) -> Gradients:
    """Propagate a seed gradient from ``output`` back to every named parameter.

    ``seed`` defaults to ones of the output shape (d(sum)/d(output)); pass an
    explicit array for other upstream gradients. Returns a map from parameter
    name to a tensor of the parameter's shape.
    """
    if seed is None:
        seed_arr = np.ones_like(output.data)
    else:
        seed_arr = np.array(getattr(seed, "data", seed), dtype=np.float64)
        if seed_arr.shape != output.shape:
            raise ValueError(f"backward: seed shape {seed_arr.shape} != output {output.shape}")
    if not output._track:
        return {}
    pending: dict[int, np.ndarray] = {id(output): seed_arr}
    grads: Gradients = {}
    for node in reversed(_toposort(output)):
        upstream = pending.pop(id(node), None)
        if upstream is None:
            continue
        if node.name is not None:
            grads[node.name] = Tensor(upstream)
            continue
        for par, vjp in zip(node._parents, node._vjps):
            if not par._track:
                continue
            contribution = vjp(upstream)
            key = id(par)
            if key in pending:
                pending[key] = pending[key] + contribution
            else:
                pending[key] = contribution
    return grads


# ---------------------------------------------------------------------------
# on-disk format: ASCII header + little-endian float32 payload, row-major

TENSOR_FILE_MAGIC = "CMMA1"


def write_tensor_file(path: str | Path, t: Tensor) -> None:
    path = Path(path)
    dims = " ".join(str(d) for d in t.shape)
    header = f"{TENSOR_FILE_MAGIC} {t.ndim}{' ' + dims if dims else ''}\n"
    payload = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    path.write_bytes(header.encode("ascii") + payload)


def read_tensor_file(path: str | Path) -> Tensor:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing tensor header")
    fields = raw[:newline].decode("ascii").split()
    if not fields or fields[0] != TENSOR_FILE_MAGIC:
        raise ValueError(f"{path}: not a {TENSOR_FILE_MAGIC} tensor file")
    rank = int(fields[1])
    dims = tuple(int(d) for d in fields[2 : 2 + rank])
    if len(dims) != rank or any(d <= 0 for d in dims):
        raise ValueError(f"{path}: malformed tensor header")
    values = np.frombuffer(raw[newline + 1 :], dtype="<f4")
    if values.size != math.prod(dims):
        raise ValueError(f"{path}: payload does not match header {dims}")
    return Tensor(values.astype(np.float64).reshape(dims))
