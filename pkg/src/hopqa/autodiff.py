"""Dense tensors with reverse-mode automatic differentiation.

Just enough machinery for desk-scale sequence models: rank-n float arrays
backed by numpy, a dynamic graph of primitive ops, and a single
``backward()`` entry point. Broadcasting is deliberately restricted to
length-1 (or missing leading) axes so shape bugs fail loudly instead of
silently fanning out.

Gradient buffers are never mutated in place; a backward closure may hand
the same array object to several consumers, which is safe under that rule.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

MASK_FILL = -1e30  # additive bias that zeroes softmax mass at padding

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class DataError(ValueError):
    """Index data out of range (ids, offsets)."""


class LabelError(ValueError):
    """Target labels out of range for the logit width."""


class UsageError(RuntimeError):
    """The op was called in a way its contract forbids."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-d float array with an optional gradient slot and graph lineage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data: np.ndarray, requires_grad: bool = False,
                 parents: tuple = (), backward: Callable | None = None):
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))


def tensor(values, dtype=None, requires_grad: bool = False) -> Tensor:
    """Build a leaf tensor from array-like values."""
    arr = np.asarray(values, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=requires_grad)


def parameter(values, dtype=None) -> Tensor:
    return tensor(values, dtype=dtype, requires_grad=True)


def constant(values, dtype=None) -> Tensor:
    return tensor(values, dtype=dtype, requires_grad=False)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _tracking(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _make(data: np.ndarray, parents: tuple, backward: Callable | None) -> Tensor:
    if backward is None:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward=backward)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad and t._backward is None:
        return
    t.grad = g if t.grad is None else t.grad + g


def _broadcast_check(sa: tuple[int, ...], sb: tuple[int, ...], opname: str) -> None:
    # right-aligned; every differing pair must involve a length-1 axis
    for da, db in zip(reversed(sa), reversed(sb)):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{opname}: shapes {sa} and {sb} do not broadcast "
                             "(only length-1 axes may expand)")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape))
                 if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a.shape, b.shape, "add")
    out = a.data + b.data
    if not _tracking(a, b):
        return Tensor(out)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a.shape, b.shape, "sub")
    out = a.data - b.data
    if not _tracking(a, b):
        return Tensor(out)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a.shape, b.shape, "mul")
    out = a.data * b.data
    if not _tracking(a, b):
        return Tensor(out)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), bwd)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))  # in (0, 1], never overflows
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        _accum(x, g * out * (1.0 - out))

    return _make(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        _accum(x, g * (1.0 - out * out))

    return _make(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        _accum(x, g * (x.data > 0))

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least rank 2, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} x {b.shape}")
    _broadcast_check(a.shape[:-2], b.shape[:-2], "matmul (batch axes)")
    out = a.data @ b.data
    if not _tracking(a, b):
        return Tensor(out)

    def bwd(g):
        _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(out, (a, b), bwd)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ShapeError(f"transpose: need rank >= 2, got {x.shape}")
    out = np.swapaxes(x.data, -1, -2)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        _accum(x, np.swapaxes(g, -1, -2))

    return _make(out, (x,), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        _accum(x, g.reshape(x.shape))

    return _make(out, (x,), bwd)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    _broadcast_check(x.shape, shape, "broadcast_to")
    out = np.broadcast_to(x.data, shape)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        _accum(x, _unbroadcast(g, x.shape))

    return _make(out, (x,), bwd)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat: need at least one part")
    rank = parts[0].ndim
    ax = axis if axis >= 0 else axis + rank
    if not 0 <= ax < rank:
        raise ShapeError(f"concat: axis {axis} out of range for rank {rank}")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != rank:
            raise ShapeError(f"concat: rank mismatch {ref} vs {p.shape}")
        for i in range(rank):
            if i != ax and p.shape[i] != ref[i]:
                raise ShapeError(f"concat: shapes {ref} and {p.shape} differ on axis {i}")
    out = np.concatenate([p.data for p in parts], axis=ax)
    if not _tracking(*parts):
        return Tensor(out)

    sizes = [p.shape[ax] for p in parts]

    def bwd(g):
        ofs = 0
        idx: list = [slice(None)] * rank
        for p, n in zip(parts, sizes):
            idx[ax] = slice(ofs, ofs + n)
            _accum(p, g[tuple(idx)])
            ofs += n

    return _make(out, tuple(parts), bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    ax = axis if axis >= 0 else axis + x.ndim
    if not 0 <= ax < x.ndim:
        raise ShapeError(f"narrow: axis {axis} out of range for shape {x.shape}")
    if start < 0 or length < 0 or start + length > x.shape[ax]:
        raise ShapeError(f"narrow: window [{start}, {start + length}) exceeds axis "
                         f"{ax} of shape {x.shape}")
    idx: list = [slice(None)] * x.ndim
    idx[ax] = slice(start, start + length)
    out = x.data[tuple(idx)]
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[tuple(idx)] = g
        _accum(x, gx)

    return _make(out, (x,), bwd)


def gather_rows(table: Tensor, ids: np.ndarray, pad_guard: bool = False) -> Tensor:
    """Row lookup ``table[ids]``; ids may have any rank.

    With ``pad_guard`` the gradient into row 0 is dropped, keeping a
    reserved padding row inert under training.
    """
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be rank 2, got {table.shape}")
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DataError("gather_rows: ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DataError(f"gather_rows: id out of range [0, {table.shape[0]}): "
                        f"min={ids.min()}, max={ids.max()}")
    out = table.data[ids]
    if not _tracking(table):
        return Tensor(out)

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        if pad_guard:
            gt[0] = 0.0
        _accum(table, gt)

    return _make(out, (table,), bwd)


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis: int, ndim: int, opname: str) -> int:
    ax = axis if axis >= 0 else axis + ndim
    if not 0 <= ax < ndim:
        raise ShapeError(f"{opname}: axis {axis} out of range for rank {ndim}")
    return ax


def softmax(x: Tensor, axis: int) -> Tensor:
    """Softmax along ``axis``, computed with max-subtraction."""
    ax = _norm_axis(axis, x.ndim, "softmax")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax: non-finite input")
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        dot = (g * out).sum(axis=ax, keepdims=True)
        _accum(x, out * (g - dot))

    return _make(out, (x,), bwd)


def max_reduce(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along ``axis``; gradient flows to the first maximizer on ties."""
    ax = _norm_axis(axis, x.ndim, "max_reduce")
    out = x.data.max(axis=ax, keepdims=keepdims)
    if not _tracking(x):
        return Tensor(out)

    idx = np.expand_dims(np.argmax(x.data, axis=ax), ax)

    def bwd(g):
        gx = np.zeros_like(x.data)
        ge = g if keepdims else np.expand_dims(g, ax)
        np.put_along_axis(gx, idx, ge, ax)
        _accum(x, gx)

    return _make(out, (x,), bwd)


def reduce_sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        out = x.data.sum()
        if not _tracking(x):
            return Tensor(np.asarray(out, dtype=x.dtype))

        def bwd_all(g):
            _accum(x, np.broadcast_to(g, x.shape))

        return _make(np.asarray(out, dtype=x.dtype), (x,), bwd_all)

    ax = _norm_axis(axis, x.ndim, "reduce_sum")
    out = x.data.sum(axis=ax, keepdims=keepdims)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        ge = g if keepdims else np.expand_dims(g, ax)
        _accum(x, np.broadcast_to(ge, x.shape))

    return _make(out, (x,), bwd)


def reduce_mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.shape[_norm_axis(axis, x.ndim, "reduce_mean")]
    s = reduce_sum(x, axis=axis, keepdims=keepdims)
    return mul(s, _as_tensor(1.0 / n, x.dtype))


# ---------------------------------------------------------------------------
# losses and regularization


def cross_entropy(logits: Tensor, targets, reduction: str = "sum",
                  mask=None) -> Tensor:
    """Negative log-softmax of the target class per row, reduced over rows.

    ``mask`` (per-row, 0/1) zeroes masked rows; ``mean`` divides by the
    number of unmasked rows. Target values at masked rows are ignored.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be rank 2, got {logits.shape}")
    if reduction not in ("sum", "mean"):
        raise UsageError(f"cross_entropy: unknown reduction {reduction!r}")
    n, c = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy: targets shape {targets.shape} != ({n},)")
    m = np.ones(n, dtype=logits.dtype) if mask is None else \
        np.asarray(mask, dtype=logits.dtype).reshape(n)
    live = m != 0
    if live.any():
        tl = targets[live]
        if tl.min() < 0 or tl.max() >= c:
            raise LabelError(f"cross_entropy: target out of range [0, {c}): "
                             f"min={tl.min()}, max={tl.max()}")
    safe_t = np.where(live, targets, 0).astype(np.int64)

    zmax = logits.data.max(axis=1, keepdims=True)
    z = logits.data - zmax
    lse = np.log(np.exp(z).sum(axis=1))
    per_row = (lse - z[np.arange(n), safe_t]) * m
    kept = max(int(live.sum()), 1)
    scale = 1.0 if reduction == "sum" else 1.0 / kept
    out = np.asarray(per_row.sum() * scale, dtype=logits.dtype)
    if not _tracking(logits):
        return Tensor(out)

    def bwd(g):
        p = np.exp(z - np.log(np.exp(z).sum(axis=1, keepdims=True)))
        p[np.arange(n), safe_t] -= 1.0
        _accum(logits, (g * scale) * p * m[:, None])

    return _make(out, (logits,), bwd)


def binary_cross_entropy(logits: Tensor, labels, reduction: str = "mean",
                         mask=None) -> Tensor:
    """Sigmoid cross-entropy per element, masked entries contributing zero."""
    if reduction not in ("sum", "mean"):
        raise UsageError(f"binary_cross_entropy: unknown reduction {reduction!r}")
    y = np.asarray(labels, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ShapeError(f"binary_cross_entropy: labels shape {y.shape} != "
                         f"logits shape {logits.shape}")
    m = np.ones_like(y) if mask is None else np.asarray(mask, dtype=logits.dtype)
    if m.shape != logits.shape:
        raise ShapeError(f"binary_cross_entropy: mask shape {m.shape} != "
                         f"logits shape {logits.shape}")
    x = logits.data
    per = (np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))) * m
    kept = max(int((m != 0).sum()), 1)
    scale = 1.0 if reduction == "sum" else 1.0 / kept
    out = np.asarray(per.sum() * scale, dtype=logits.dtype)
    if not _tracking(logits):
        return Tensor(out)

    def bwd(g):
        _accum(logits, (g * scale) * (_stable_sigmoid(x) - y) * m)

    return _make(out, (logits,), bwd)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout: training mode requires an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = x.data * keep
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        _accum(x, g * keep)

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# reverse pass


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        nid = id(node)
        if nid in visited:
            continue
        visited.add(nid)
        stack.append((node, True))
        for p in node._parents:
            if p._backward is not None or p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable requires_grad leaf.

    Gradients accumulate additively when a tensor feeds several consumers.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward: loss must be a scalar, got shape {loss.shape}")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
