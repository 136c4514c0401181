"""Minimal dense-array engine with reverse-mode automatic differentiation.

Everything is float64. A computation graph is built on the fly by the op
functions below and discarded once ``backward`` has run, so there is no
persistent tape across training steps. Only the operations the alignment
network actually needs are provided; none of them broadcast beyond what
numpy's rules allow, and conv1d uses the cross-correlation convention
(no kernel flip).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class Tensor:
    """Dense float64 array participating in reverse-mode differentiation.

    ``grad`` is populated on graph leaves (tensors created directly, not by
    an op) that have ``requires_grad`` set, after ``backward()`` is called on
    a downstream scalar. Gradients accumulate across calls until
    ``zero_grad``-style clearing by the caller.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar used throughout the model code.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; fills ``grad`` on leaves.

        The graph reachable from this tensor is freed afterwards.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
            # free the graph as we go: no persistent tape across steps
            node._parents = ()
            node._backward = None


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(data, (a, b), _bw)


def mul(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None

    def _bw(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return _result(data, (a, b), _bw)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def _bw(g):
        return ((x.data > 0.0) * g,)

    return _result(data, (x,), _bw)


def leaky_relu(x: Tensor, alpha: float = 0.1) -> Tensor:
    """Leaky ReLU; the subgradient at 0 is taken as ``alpha``."""
    data = np.where(x.data > 0.0, x.data, alpha * x.data)

    def _bw(g):
        return (np.where(x.data > 0.0, 1.0, alpha) * g,)

    return _result(data, (x,), _bw)


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    data = np.where(z >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def _bw(g):
        return (data * (1.0 - data) * g,)

    return _result(data, (x,), _bw)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def _bw(g):
        return ((1.0 - data * data) * g,)

    return _result(data, (x,), _bw)


def absolute(x: Tensor) -> Tensor:
    """Elementwise |x|; subgradient 0 at exactly 0."""
    data = np.abs(x.data)

    def _bw(g):
        return (np.sign(x.data) * g,)

    return _result(data, (x,), _bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((g - dot) * data,)

    return _result(data, (x,), _bw)


# ---------------------------------------------------------------------------
# reductions


def tsum(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum())

    def _bw(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(data, (x,), _bw)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.asarray(x.data.mean())

    def _bw(g):
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _result(data, (x,), _bw)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def _bw(g):
        return (g.reshape(x.shape),)

    return _result(data, (x,), _bw)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {x.shape}")
    data = x.data.T.copy()

    def _bw(g):
        return (g.T.copy(),)

    return _result(data, (x,), _bw)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = x.data[idx].copy()

    def _bw(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _result(data, (x,), _bw)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _bw(g):
        grads = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(bounds[i], bounds[i + 1])
            grads.append(g[tuple(idx)].copy())
        return tuple(grads)

    return _result(data, tuple(tensors), _bw)


def index_select(x: Tensor, indices) -> Tensor:
    """Gather entries of a 1-D tensor; gradient scatter-adds back."""
    if x.data.ndim != 1:
        raise ShapeError(f"index_select expects a 1-D tensor, got {x.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    data = x.data[idx]

    def _bw(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result(data, (x,), _bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D tensors, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} vs {b.shape}"
        )
    data = a.data @ b.data

    def _bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), _bw)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation with zero padding.

    x: (C_in, T), kernel: (C_out, C_in, k), bias: (C_out,) or None.
    Output length is floor((T + 2*padding - k)/stride) + 1.
    """
    if x.data.ndim != 2 or kernel.data.ndim != 3:
        raise ShapeError(
            f"conv1d expects input (C_in, T) and kernel (C_out, C_in, k), "
            f"got {x.shape} and {kernel.shape}"
        )
    c_in, t = x.shape
    c_out, kc_in, k = kernel.shape
    if kc_in != c_in:
        raise ShapeError(
            f"conv1d channel mismatch: input has {c_in} channels "
            f"(shape {x.shape}) but kernel expects {kc_in} (shape {kernel.shape})"
        )
    if k < 1 or stride < 1:
        raise ValueError(f"conv1d needs k >= 1 and stride >= 1, got k={k}, stride={stride}")
    if t + 2 * padding < k:
        raise ShapeError(
            f"conv1d input too short: T={t} with padding {padding} < kernel {k}"
        )

    xp = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride, :]
    t_out = windows.shape[1]
    # (C_out, C_in*k) @ (C_in*k, T') is the fast path for the sizes we use
    wins = windows.transpose(0, 2, 1).reshape(c_in * k, t_out)
    data = kernel.data.reshape(c_out, c_in * k) @ wins
    if bias is not None:
        data = data + bias.data[:, None]

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def _bw(g):
        gx = gk = gb = None
        if kernel.requires_grad:
            gk = (g @ wins.T).reshape(c_out, c_in, k)
        if x.requires_grad:
            # scatter-add each kernel tap's contribution back onto the padded input
            contrib = (g.T @ kernel.data.reshape(c_out, c_in * k))  # (T', C_in*k)
            contrib = contrib.reshape(t_out, c_in, k).transpose(0, 2, 1).reshape(t_out * k, c_in)
            pos = (np.arange(t_out)[:, None] * stride + np.arange(k)[None, :]).ravel()
            gxp = np.zeros((xp.shape[1], c_in))
            np.add.at(gxp, pos, contrib)
            gx = gxp.T
            if padding:
                gx = gx[:, padding:gx.shape[1] - padding]
            gx = np.ascontiguousarray(gx)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=1)
        return (gx, gk) if bias is None else (gx, gk, gb)

    return _result(data, parents, _bw)


def interp_gather(values: Tensor, positions: Tensor) -> Tensor:
    """Linearly interpolate columns of ``values`` at fractional ``positions``.

    values: (C, T), positions: (T_out,) of fractional column indices.
    Positions are clamped to [0, T-1]; the gradient w.r.t. a position is the
    local finite slope, using the right-hand slope at exact integers and zero
    in the clamped regions (including the right endpoint).
    """
    if values.data.ndim != 2:
        raise ShapeError(f"interp_gather expects values (C, T), got {values.shape}")
    if positions.data.ndim != 1:
        raise ShapeError(f"interp_gather expects 1-D positions, got {positions.shape}")
    if not np.all(np.isfinite(positions.data)):
        raise ValueError("interp_gather positions must be finite")
    c, t = values.shape
    p = np.clip(positions.data, 0.0, t - 1.0)
    i0 = np.floor(p).astype(np.intp)
    i1 = np.minimum(i0 + 1, t - 1)
    frac = p - i0
    data = (1.0 - frac) * values.data[:, i0] + frac * values.data[:, i1]

    def _bw(g):
        gv = gp = None
        if values.requires_grad:
            gvt = np.zeros((t, c))
            np.add.at(gvt, i0, ((1.0 - frac)[:, None] * g.T))
            np.add.at(gvt, i1, (frac[:, None] * g.T))
            gv = np.ascontiguousarray(gvt.T)
        if positions.requires_grad:
            slope = values.data[:, i1] - values.data[:, i0]
            gp = (g * slope).sum(axis=0)
            outside = (positions.data < 0.0) | (positions.data > t - 1.0)
            gp = np.where(outside, 0.0, gp)
        return gv, gp

    return _result(data, (values, positions), _bw)
