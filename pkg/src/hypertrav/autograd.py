"""Reverse-mode automatic differentiation over numpy arrays.

Each operation returns a new :class:`Tensor` that remembers its parents and a
closure pushing the output gradient back to them.  :meth:`Tensor.backward`
walks the graph in reverse topological order.
"""
from __future__ import annotations

import numpy as np

from .errors import GraphError, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    # -- basics ---------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph ----------------------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def backward(self) -> None:
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("loss does not depend on any parameter")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ------------------------------------------------------------
    def __add__(self, other) -> Tensor:
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other) -> Tensor:
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other) -> Tensor:
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self) -> Tensor:
        return mul(self, -1.0)

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index) -> Tensor:
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None) -> Tensor:
        return tmean(self, axis)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    return Tensor._make(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    return Tensor._make(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    return Tensor._make(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                   _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def square(a: Tensor) -> Tensor:
    return Tensor._make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return Tensor._make(out, (a,), lambda g: (-g * out * out,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    return Tensor._make(
        a.data @ b.data, (a, b),
        lambda g: (g @ b.data.T if a.requires_grad else None,
                   a.data.T @ g if b.requires_grad else None))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._make(np.asarray(out), (a,), backward)


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeMismatch("mean over an empty axis")
    return mul(tsum(a, axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),))


def take(a: Tensor, index) -> Tensor:
    """Row/element selection; gradient scatters back with accumulation."""
    if isinstance(index, np.ndarray) and index.dtype == bool:
        index = np.flatnonzero(index) if index.ndim == 1 else np.nonzero(index)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._make(np.array(out), (a,), backward)


def take_rows(a: Tensor, rows: np.ndarray) -> Tensor:
    """Gather rows by integer index (faster than ``take`` for unique rows)."""
    rows = np.asarray(rows, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.data)
        if rows.size:
            np.add.at(full, rows, g)
        return (full,)

    return Tensor._make(a.data[rows], (a,), backward)


def scatter_rows(a: Tensor, rows: np.ndarray, n_rows: int) -> Tensor:
    """Place the rows of ``a`` at unique positions of a zero (n_rows, ...) array."""
    rows = np.asarray(rows, dtype=np.int64)
    out = np.zeros((n_rows,) + a.shape[1:], dtype=a.dtype)
    out[rows] = a.data
    return Tensor._make(out, (a,), lambda g: (g[rows],))


def segment_max(a: Tensor, starts: np.ndarray) -> Tensor:
    """Column-wise max over consecutive row segments beginning at ``starts``.

    Segments must be nonempty.  The gradient goes to the first row attaining
    the maximum in each segment and column.
    """
    x = a.data
    starts = np.asarray(starts, dtype=np.int64)
    if starts.size == 0:
        return Tensor._make(np.zeros((0,) + x.shape[1:], dtype=x.dtype), (a,),
                            lambda g: (np.zeros_like(x),))
    lengths = np.diff(np.append(starts, x.shape[0]))
    if np.any(lengths <= 0):
        raise ShapeMismatch("segments must be nonempty and ascending")
    out = np.empty((starts.size,) + x.shape[1:], dtype=x.dtype)
    need_arg = a.requires_grad
    arg = np.empty(out.shape, dtype=np.int64) if need_arg else None
    # segments of equal length form a dense block, reduced in one call
    for length in np.unique(lengths):
        sel = np.nonzero(lengths == length)[0]
        block = x[starts[sel][:, None] + np.arange(length)]
        if need_arg:
            local = block.argmax(axis=1)  # first maximum wins ties
            arg[sel] = starts[sel][:, None] + local
            out[sel] = np.take_along_axis(block, local[:, None], axis=1)[:, 0]
        else:
            out[sel] = block.max(axis=1)
    cols = np.arange(x.shape[1])[None, :]

    def backward(g):
        full = np.zeros_like(x)
        full[arg, cols] = g
        return (full,)

    return Tensor._make(out, (a,), backward)


def _shift(x: np.ndarray, di: int, dj: int) -> np.ndarray:
    """out[:, i, j] = x[:, i + di, j + dj] with zeros outside."""
    out = np.zeros_like(x)
    h, w = x.shape[1], x.shape[2]
    si = slice(max(0, -di), h - max(0, di))
    sj = slice(max(0, -dj), w - max(0, dj))
    ti = slice(max(0, di), h - max(0, -di))
    tj = slice(max(0, dj), w - max(0, -dj))
    out[:, si, sj] = x[:, ti, tj]
    return out


def conv3x3(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded 3x3 convolution on channels-last maps.

    ``x``: (B, H, W, C), ``w``: (3, 3, C, O), ``b``: (O,).
    """
    if x.data.ndim != 4 or w.shape[:2] != (3, 3) or w.shape[2] != x.shape[3]:
        raise ShapeMismatch(f"conv3x3 input {x.shape} with kernel {w.shape}")
    xd, wd = x.data, w.data
    bsz, h, wid, c = xd.shape
    o = wd.shape[3]
    out = np.zeros((bsz, h, wid, o), dtype=xd.dtype)
    flat = xd.reshape(-1, c)
    for ki in range(3):
        for kj in range(3):
            y = (flat @ wd[ki, kj]).reshape(bsz, h, wid, o)
            out += _shift(y, ki - 1, kj - 1)
    parents = (x, w) if b is None else (x, w, b)
    if b is not None:
        out += b.data

    def backward(g):
        gx = np.zeros_like(xd) if x.requires_grad else None
        gw = np.zeros_like(wd) if w.requires_grad else None
        for ki in range(3):
            for kj in range(3):
                # undo the shift: y[i+di, j+dj] received g[i, j]
                gy = _shift(g, -(ki - 1), -(kj - 1)).reshape(-1, o)
                if gw is not None:
                    gw[ki, kj] = flat.T @ gy
                if gx is not None:
                    gx += (gy @ wd[ki, kj].T).reshape(xd.shape)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.reshape(-1, o).sum(axis=0))
        return tuple(grads)

    return Tensor._make(out, parents, backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Training-mode batch norm over rows of a (N, C) tensor.

    Returns the output and the (biased) batch mean and variance so the caller
    can maintain running statistics.
    """
    xd = x.data
    n = xd.shape[0]
    mu = xd.mean(axis=0)
    var = xd.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=0)
        gbeta = g.sum(axis=0)
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data
            gx = (inv / n) * (n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
        return gx, ggamma, gbeta

    return Tensor._make(out, (x, gamma, beta), backward), mu, var
