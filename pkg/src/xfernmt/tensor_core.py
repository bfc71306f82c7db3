"""Reverse-mode autodiff over numpy arrays, plus the optimizer primitives.

The library is deliberately minimal: it implements exactly the primitives the
encoder-decoder model needs (affine maps, LSTM gating nonlinearities, softmax,
embedding lookup, the attention contractions) and nothing else.  Arrays are
dense, row-major numpy ndarrays; float32 by default, float64 when checking
gradients against finite differences.

Forward ops record their inputs and a backward closure on the output node.
``backward()`` linearizes the graph into a tape (reverse topological order)
and replays it once; gradients accumulate additively at fan-out points.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "no_grad",
    "constant",
    "parameter",
    "add",
    "mul",
    "matmul",
    "affine",
    "concat",
    "stack",
    "col_slice",
    "reshape",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "embedding_rows",
    "pick",
    "tsum",
    "attn_scores",
    "attn_context",
    "lstm_cell",
    "dropout",
    "clip_gradients",
    "global_grad_norm",
    "sgd_step",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (eval-mode forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus the bookkeeping needed to replay gradients."""

    __slots__ = ("data", "grad", "_parents", "_bwd", "_needs")

    def __init__(self, data: np.ndarray, needs_grad: bool = False):
        self.data = data
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None
        self._needs = needs_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # Operator sugar for the handful of infix uses in model code.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        tape = _linearize(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(tape):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)
            # Free intermediate state; leaves keep their grads.
            if node._parents:
                node.grad = None
                node._parents = ()
                node._bwd = None


def _linearize(root: Tensor) -> list[Tensor]:
    """Order the graph so parents precede children (iterative DFS)."""
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def constant(data) -> Tensor:
    """Wrap an array that never needs gradients."""
    return Tensor(np.asarray(data))


def parameter(data: np.ndarray) -> Tensor:
    """Wrap a trainable leaf array."""
    return Tensor(np.asarray(data), needs_grad=True)


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _wire(out: Tensor, parents: Sequence[Tensor], bwd) -> Tensor:
    if _grad_enabled and any(p._needs for p in parents):
        out._parents = tuple(parents)
        out._bwd = bwd
        out._needs = True
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    out = Tensor(a.data + b.data)

    def bwd(g):
        if a._needs:
            a._accum(_unbroadcast(g, a.data.shape))
        if b._needs:
            b._accum(_unbroadcast(g, b.data.shape))

    return _wire(out, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    out = Tensor(a.data * b.data)

    def bwd(g):
        if a._needs:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b._needs:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _wire(out, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dims differ, left {a.data.shape} vs right {b.data.shape}"
        )
    out = Tensor(a.data @ b.data)

    def bwd(g):
        if a._needs:
            a._accum(g @ b.data.T)
        if b._needs:
            b._accum(a.data.T @ g)

    return _wire(out, (a, b), bwd)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b in one node; the common projection step."""
    out = Tensor(x.data @ w.data + b.data)

    def bwd(g):
        if x._needs:
            x._accum(g @ w.data.T)
        if w._needs:
            w._accum(x.data.T @ g)
        if b._needs:
            b._accum(_unbroadcast(g, b.data.shape))

    return _wire(out, (x, w, b), bwd)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            if p._needs:
                p._accum(piece)

    return _wire(out, tuple(parts), bwd)


def stack(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    out = Tensor(np.stack([p.data for p in parts], axis=axis))

    def bwd(g):
        for i, p in enumerate(parts):
            if p._needs:
                p._accum(np.take(g, i, axis=axis))

    return _wire(out, tuple(parts), bwd)


def col_slice(t: Tensor, start: int, stop: int) -> Tensor:
    """Slice of the last axis; used to split gate pre-activations."""
    out = Tensor(t.data[..., start:stop])

    def bwd(g):
        if t._needs:
            full = np.zeros_like(t.data)
            full[..., start:stop] = g
            t._accum(full)

    return _wire(out, (t,), bwd)


def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(t.data.reshape(shape))

    def bwd(g):
        if t._needs:
            t._accum(g.reshape(t.data.shape))

    return _wire(out, (t,), bwd)


def sigmoid(t: Tensor) -> Tensor:
    # Split by sign so the exp never overflows.
    x = t.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(x.dtype, copy=False)
    out = Tensor(out_data)

    def bwd(g):
        if t._needs:
            t._accum(g * out_data * (1.0 - out_data))

    return _wire(out, (t,), bwd)


def tanh(t: Tensor) -> Tensor:
    out_data = np.tanh(t.data)
    out = Tensor(out_data)

    def bwd(g):
        if t._needs:
            t._accum(g * (1.0 - out_data * out_data))

    return _wire(out, (t,), bwd)


def exp(t: Tensor) -> Tensor:
    out_data = np.exp(t.data)
    out = Tensor(out_data)

    def bwd(g):
        if t._needs:
            t._accum(g * out_data)

    return _wire(out, (t,), bwd)


def log(t: Tensor) -> Tensor:
    out = Tensor(np.log(t.data))

    def bwd(g):
        if t._needs:
            t._accum(g / t.data)

    return _wire(out, (t,), bwd)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    x = t.data
    if x.size == 0:
        raise ShapeError("softmax: empty input")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        if t._needs:
            dot = (g * s).sum(axis=axis, keepdims=True)
            t._accum(s * (g - dot))

    return _wire(out, (t,), bwd)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    x = t.data
    if x.size == 0:
        raise ShapeError("log_softmax: empty input")
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    out = Tensor(out_data)

    def bwd(g):
        if t._needs:
            t._accum(g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return _wire(out, (t,), bwd)


def embedding_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of an embedding table; backward scatter-adds."""
    ids = np.asarray(ids)
    out = Tensor(table.data[ids])

    def bwd(g):
        if table._needs:
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            table._accum(full)

    return _wire(out, (table,), bwd)


def pick(t: Tensor, ids: np.ndarray) -> Tensor:
    """Per-row element selection: out[i] = t[i, ids[i]] (2D input)."""
    ids = np.asarray(ids)
    rows = np.arange(t.data.shape[0])
    out = Tensor(t.data[rows, ids])

    def bwd(g):
        if t._needs:
            full = np.zeros_like(t.data)
            np.add.at(full, (rows, ids), g)
            t._accum(full)

    return _wire(out, (t,), bwd)


def tsum(t: Tensor) -> Tensor:
    """Sum all elements to a scalar."""
    out = Tensor(np.asarray(t.data.sum()))

    def bwd(g):
        if t._needs:
            t._accum(np.broadcast_to(g, t.data.shape).astype(t.data.dtype, copy=False))

    return _wire(out, (t,), bwd)


def attn_scores(enc: Tensor, h: Tensor) -> Tensor:
    """Dot-product scores between (B,S,d) encoder states and (B,d) query."""
    out = Tensor(np.einsum("bsd,bd->bs", enc.data, h.data))

    def bwd(g):
        if enc._needs:
            enc._accum(np.einsum("bs,bd->bsd", g, h.data))
        if h._needs:
            h._accum(np.einsum("bs,bsd->bd", g, enc.data))

    return _wire(out, (enc, h), bwd)


def attn_context(weights: Tensor, enc: Tensor) -> Tensor:
    """Weighted sum of encoder states: (B,S) x (B,S,d) -> (B,d)."""
    out = Tensor(np.einsum("bs,bsd->bd", weights.data, enc.data))

    def bwd(g):
        if weights._needs:
            weights._accum(np.einsum("bd,bsd->bs", g, enc.data))
        if enc._needs:
            enc._accum(np.einsum("bs,bd->bsd", weights.data, g))

    return _wire(out, (weights, enc), bwd)


# ---------------------------------------------------------------------------
# LSTM cell


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, weights: dict) -> tuple[Tensor, Tensor]:
    """One LSTM step with input/forget/output gates and a tanh candidate.

    ``weights`` holds ``w_x`` (n_in, 4d), ``w_h`` (d, 4d) and ``b`` (4d,);
    gate order along the last axis is input, forget, candidate, output.
    Returns the new hidden and cell states, h = o * tanh(c).
    """
    d = h_prev.data.shape[-1]
    w_x, w_h, b = weights["w_x"], weights["w_h"], weights["b"]
    if x.data.shape[-1] != w_x.data.shape[0]:
        raise ShapeError(f"lstm_cell: x has width {x.data.shape[-1]}, w_x expects {w_x.data.shape[0]}")
    if c_prev.data.shape[-1] != d:
        raise ShapeError(f"lstm_cell: c_prev has width {c_prev.data.shape[-1]}, expected {d}")
    if w_h.data.shape != (d, 4 * d) or w_x.data.shape[1] != 4 * d or b.data.shape != (4 * d,):
        raise ShapeError(
            f"lstm_cell: weights mismatch hidden size {d}: "
            f"w_x {w_x.data.shape}, w_h {w_h.data.shape}, b {b.data.shape}"
        )
    z = add(add(matmul(x, w_x), matmul(h_prev, w_h)), b)
    i = sigmoid(col_slice(z, 0, d))
    f = sigmoid(col_slice(z, d, 2 * d))
    g = tanh(col_slice(z, 2 * d, 3 * d))
    o = sigmoid(col_slice(z, 3 * d, 4 * d))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


# ---------------------------------------------------------------------------
# Optimizer primitives


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train_mode: bool) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train_mode or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return mul(x, constant(keep))


def _grad_arrays(grads) -> list[np.ndarray]:
    """Flatten a gradient collection (nested dicts or iterables) to arrays."""
    out: list[np.ndarray] = []

    def walk(obj):
        if obj is None:
            return
        if isinstance(obj, np.ndarray):
            out.append(obj)
        elif isinstance(obj, dict):
            for key in sorted(obj):
                walk(obj[key])
        elif isinstance(obj, Iterable):
            for item in obj:
                walk(item)
        else:
            raise TypeError(f"unsupported gradient container: {type(obj)!r}")

    walk(grads)
    return out


def global_grad_norm(grads) -> float:
    """L2 norm over the concatenation of every array in the collection."""
    total = 0.0
    for a in _grad_arrays(grads):
        total += float(np.dot(a.ravel(), a.ravel()))
    return float(np.sqrt(total))


def clip_gradients(grads, threshold: float):
    """Rescale all gradients in place when the global norm exceeds threshold."""
    if threshold <= 0:
        raise ValueError(f"clip threshold must be positive, got {threshold}")
    norm = global_grad_norm(grads)
    if norm > threshold:
        scale = threshold / norm
        for a in _grad_arrays(grads):
            a *= scale
    return grads


def sgd_step(params, grads, lr: float, mask=None) -> None:
    """theta <- theta - lr * grad for every trainable block.

    ``params`` is a block mapping {block: {name: Tensor}}, ``grads`` the
    matching {block: {name: ndarray}}.  Blocks whose ``mask`` entry is True
    are frozen and left bitwise untouched.
    """
    for block, arrays in params.items():
        if mask is not None and mask.is_frozen(block):
            continue
        gblock = grads.get(block, {})
        for name, tensor in arrays.items():
            g = gblock.get(name)
            if g is None:
                continue
            if g.shape != tensor.data.shape:
                raise ShapeError(
                    f"sgd_step: grad shape {g.shape} does not match {block}/{name} {tensor.data.shape}"
                )
            tensor.data -= np.asarray(lr, dtype=tensor.data.dtype) * g.astype(tensor.data.dtype, copy=False)
