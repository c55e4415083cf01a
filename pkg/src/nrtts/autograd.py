"""Minimal reverse-mode autodiff over float64 numpy arrays.

Small by design: exactly the operations the models need, each with an
explicit vector-Jacobian product.  Graphs are built eagerly; calling
``backward()`` on a scalar runs one reverse topological sweep.  Gradient
tracking can be suspended with :func:`no_grad` for inference paths.
"""
from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import erf

from . import kernels

_GRAD_ENABLED = True

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    # -- construction of graph nodes -------------------------------------
    @staticmethod
    def _result(data, parents, vjp):
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(data)
        if track:
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        return out

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    # -- bookkeeping ------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- elementwise arithmetic -------------------------------------------
    def __add__(self, other):
        other = _as_tensor(other)
        out_data = self.data + other.data

        def vjp(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._result(out_data, (self, other), vjp)

    __radd__ = __add__

    def __mul__(self, other):
        other = _as_tensor(other)
        out_data = self.data * other.data

        def vjp(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._result(out_data, (self, other), vjp)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __truediv__(self, other):
        other = _as_tensor(other)
        out_data = self.data / other.data

        def vjp(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data ** 2), other.data.shape)
                )

        return Tensor._result(out_data, (self, other), vjp)

    def __pow__(self, exponent: float):
        out_data = self.data ** exponent

        def vjp(g):
            if self.requires_grad:
                self._accumulate(g * exponent * self.data ** (exponent - 1.0))

        return Tensor._result(out_data, (self,), vjp)

    def __matmul__(self, other):
        other = _as_tensor(other)
        a, b = self.data, other.data
        out_data = a @ b
        a2 = a[None, :] if a.ndim == 1 else a
        b2 = b[:, None] if b.ndim == 1 else b

        def vjp(g):
            if a.ndim == 1:
                g = np.expand_dims(g, -2)
            if b.ndim == 1:
                g = np.expand_dims(g, -1)
            if self.requires_grad:
                ga = g @ np.swapaxes(b2, -1, -2)
                self._accumulate(_unbroadcast(ga, a2.shape).reshape(a.shape))
            if other.requires_grad:
                gb = np.swapaxes(a2, -1, -2) @ g
                other._accumulate(_unbroadcast(gb, b2.shape).reshape(b.shape))

        return Tensor._result(out_data, (self, other), vjp)

    # -- shape ops ---------------------------------------------------------
    def reshape(self, *shape):
        out_data = self.data.reshape(*shape)
        src_shape = self.data.shape

        def vjp(g):
            if self.requires_grad:
                self._accumulate(g.reshape(src_shape))

        return Tensor._result(out_data, (self,), vjp)

    def transpose(self, axes):
        out_data = np.transpose(self.data, axes)
        inv = np.argsort(axes)

        def vjp(g):
            if self.requires_grad:
                self._accumulate(np.transpose(g, inv))

        return Tensor._result(out_data, (self,), vjp)

    def __getitem__(self, key):
        out_data = self.data[key]
        src_shape = self.data.shape

        def vjp(g):
            if self.requires_grad:
                gx = np.zeros(src_shape)
                np.add.at(gx, key, g)
                self._accumulate(gx)

        return Tensor._result(out_data, (self,), vjp)

    def flip0(self):
        """Reverse along the time (first) axis."""
        out_data = self.data[::-1].copy()

        def vjp(g):
            if self.requires_grad:
                self._accumulate(g[::-1])

        return Tensor._result(out_data, (self,), vjp)

    # -- reductions ---------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        src_shape = self.data.shape

        def vjp(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, src_shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, src_shape).copy())

        return Tensor._result(out_data, (self,), vjp)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def vjp(g):
        if x.requires_grad:
            x._accumulate(g * out_data)

    return Tensor._result(out_data, (x,), vjp)


def log(x: Tensor) -> Tensor:
    out_data = np.log(x.data)

    def vjp(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    return Tensor._result(out_data, (x,), vjp)


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)

    def vjp(g):
        if x.requires_grad:
            x._accumulate(g * 0.5 / out_data)

    return Tensor._result(out_data, (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def vjp(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - out_data ** 2))

    return Tensor._result(out_data, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def vjp(g):
        if x.requires_grad:
            x._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._result(out_data, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def vjp(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0.0))

    return Tensor._result(out_data, (x,), vjp)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out_data = x.data * cdf

    def vjp(g):
        if x.requires_grad:
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data ** 2)
            x._accumulate(g * (cdf + x.data * pdf))

    return Tensor._result(out_data, (x,), vjp)


def absolute(x: Tensor) -> Tensor:
    out_data = np.abs(x.data)

    def vjp(g):
        if x.requires_grad:
            x._accumulate(g * np.sign(x.data))

    return Tensor._result(out_data, (x,), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        if x.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            x._accumulate((g - dot) * out_data)

    return Tensor._result(out_data, (x,), vjp)


# ---------------------------------------------------------------------------
# structured ops
# ---------------------------------------------------------------------------

def concat(tensors, axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor._result(out_data, tuple(tensors), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with affine parameters."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = gamma.data * xhat + beta.data

    def vjp(g):
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.data.shape))
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * xhat, gamma.data.shape))
        if x.requires_grad:
            gx_hat = g * gamma.data
            m1 = gx_hat.mean(axis=-1, keepdims=True)
            m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gx_hat - m1 - xhat * m2))

    return Tensor._result(out_data, (x, gamma, beta), vjp)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    out_data = table.data[ids]

    def vjp(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            table._accumulate(gt)

    return Tensor._result(out_data, (table,), vjp)


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1,
           pad_left: int = 0, pad_right: int = 0) -> Tensor:
    """Time-major 1-D convolution: x [T, C_in], w [K, C_in, C_out]."""
    xp = x.data
    if pad_left or pad_right:
        xp = np.pad(xp, ((pad_left, pad_right), (0, 0)))
    xp = np.ascontiguousarray(xp)
    out_data = kernels.conv1d_fwd(xp, w.data, b.data, stride)

    def vjp(g):
        gxp, gw, gb = kernels.conv1d_bwd(xp, w.data, np.ascontiguousarray(g), stride)
        if x.requires_grad:
            end = gxp.shape[0] - pad_right
            x._accumulate(gxp[pad_left:end])
        if w.requires_grad:
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(gb)

    return Tensor._result(out_data, (x, w, b), vjp)


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor,
         reverse: bool = False) -> Tensor:
    """Unidirectional LSTM over x [T, I] from zero initial state -> [T, H]."""
    hdim = w_hh.data.shape[0]
    xd = np.ascontiguousarray(x.data[::-1]) if reverse else x.data
    xw = np.ascontiguousarray(xd @ w_ih.data + b.data)
    h0 = np.zeros(hdim)
    c0 = np.zeros(hdim)
    h, c, gates = kernels.lstm_fwd(xw, w_hh.data, h0, c0)
    out_data = np.ascontiguousarray(h[::-1]) if reverse else h

    def vjp(g):
        gy = np.ascontiguousarray(g[::-1]) if reverse else np.ascontiguousarray(g)
        gxw = kernels.lstm_bwd(gy, gates, c, h, w_hh.data, h0, c0)
        if x.requires_grad:
            gx = gxw @ w_ih.data.T
            x._accumulate(gx[::-1] if reverse else gx)
        if w_ih.requires_grad:
            w_ih._accumulate(xd.T @ gxw)
        if w_hh.requires_grad:
            # sum_t outer(h_{t-1}, gxw_t) as one matmul over the sequence
            h_prev = np.vstack([h0[None, :], h[:-1]])
            w_hh._accumulate(h_prev.T @ gxw)
        if b.requires_grad:
            b._accumulate(gxw.sum(axis=0))

    return Tensor._result(out_data, (x, w_ih, w_hh, b), vjp)
