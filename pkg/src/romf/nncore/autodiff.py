"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Var`` wraps an ndarray together with the recipe that produced it.
Calling :meth:`Var.backward` on a scalar propagates gradients to every
upstream ``Var`` that either is a parameter leaf or has parents of its
own; plain data leaves are skipped, which keeps the expensive conv
input-gradient out of first layers.

The op set is intentionally small: exactly what dense, convolutional,
recurrent and normalization layers need. Convolution is a single fused
node (im2col + one BLAS matmul) because it dominates training time.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError

__all__ = [
    "Var",
    "as_var",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "sigmoid",
    "tanh",
    "relu",
    "leaky_relu",
    "swish",
    "softplus",
    "log",
    "sqrt",
    "square",
    "clamp_min",
    "vsum",
    "vmean",
    "reshape",
    "transpose",
    "getitem",
    "concat",
    "conv1d",
    "avg_pool1d",
    "upsample1d",
]

SOFTPLUS_CUTOFF = 30.0


class Var:
    """Node of the computation graph.

    ``_edges`` is a tuple of ``(parent, pull)`` pairs where ``pull`` maps
    the gradient at this node to the gradient contribution for that
    parent. ``param=True`` marks trainable leaves so backward knows to
    keep their gradients.
    """

    __slots__ = ("data", "grad", "_edges", "_param")

    def __init__(self, data, edges=(), param=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self._edges = edges
        self._param = param

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Var(shape={self.data.shape}, leaf={not self._edges})"

    def backward(self, seed=None) -> None:
        """Accumulate gradients of ``self`` w.r.t. every live ancestor.

        ``seed`` defaults to 1 and must match this node's shape; for a
        non-scalar output it is the upstream loss gradient.
        """
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward() without seed requires a scalar output")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.data.shape:
                raise ShapeError(f"seed shape {seed.shape} != output shape {self.data.shape}")
        self.grad = seed
        for node in _reverse_topo(self):
            g = node.grad
            if g is None:
                continue
            for parent, pull in node._edges:
                if not (parent._param or parent._edges):
                    continue
                contrib = pull(g)
                parent.grad = contrib if parent.grad is None else parent.grad + contrib

    # Operator sugar used sparingly in layer code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _reverse_topo(root: Var):
    """Consumers-before-producers ordering via iterative postorder DFS.

    A node is appended only once all nodes reachable from it are done,
    so shared subexpressions (diamonds) receive every gradient
    contribution before their own is propagated.
    """
    order = []
    visited: set[int] = set()
    appended: set[int] = set()
    stack = [root]
    while stack:
        node = stack[-1]
        nid = id(node)
        if nid in visited:
            stack.pop()
            if nid not in appended:
                appended.add(nid)
                order.append(node)
            continue
        visited.add(nid)
        for parent, _ in node._edges:
            if id(parent) not in visited and (parent._param or parent._edges):
                stack.append(parent)
    return reversed(order)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.data.shape, b.data.shape
    return Var(
        a.data + b.data,
        edges=((a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.data.shape, b.data.shape
    return Var(
        a.data - b.data,
        edges=((a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(-g, sb))),
    )


def neg(a) -> Var:
    a = as_var(a)
    return Var(-a.data, edges=((a, lambda g: -g),))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    da, db = a.data, b.data
    return Var(
        da * db,
        edges=(
            (a, lambda g: _unbroadcast(g * db, da.shape)),
            (b, lambda g: _unbroadcast(g * da, db.shape)),
        ),
    )


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    da, db = a.data, b.data
    out = da / db
    return Var(
        out,
        edges=(
            (a, lambda g: _unbroadcast(g / db, da.shape)),
            (b, lambda g: _unbroadcast(-g * out / db, db.shape)),
        ),
    )


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    da, db = a.data, b.data
    return Var(
        da @ db,
        edges=((a, lambda g: g @ db.T), (b, lambda g: da.T @ g)),
    )


def _elementwise(a: Var, out: np.ndarray, local: np.ndarray) -> Var:
    return Var(out, edges=((a, lambda g: g * local),))


def _sigmoid_data(x: np.ndarray) -> np.ndarray:
    # overflow-free: sigmoid(x) = (1 + tanh(x/2)) / 2
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Var:
    a = as_var(a)
    out = _sigmoid_data(a.data)
    return _elementwise(a, out, out * (1.0 - out))


def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.data)
    return _elementwise(a, out, 1.0 - out * out)


def relu(a) -> Var:
    a = as_var(a)
    mask = a.data > 0
    return _elementwise(a, np.where(mask, a.data, 0.0), mask.astype(np.float64))


def leaky_relu(a, slope: float = 0.01) -> Var:
    a = as_var(a)
    mask = a.data > 0
    out = np.where(mask, a.data, slope * a.data)
    return _elementwise(a, out, np.where(mask, 1.0, slope))


def swish(a) -> Var:
    a = as_var(a)
    s = _sigmoid_data(a.data)
    out = a.data * s
    return _elementwise(a, out, s * (1.0 + a.data * (1.0 - s)))


def softplus(a) -> Var:
    """log(1+exp(x)) with the linear branch above SOFTPLUS_CUTOFF."""
    a = as_var(a)
    x = a.data
    out = np.where(x > SOFTPLUS_CUTOFF, x, np.log1p(np.exp(np.minimum(x, SOFTPLUS_CUTOFF))))
    return _elementwise(a, out, _sigmoid_data(x))


def log(a) -> Var:
    a = as_var(a)
    return _elementwise(a, np.log(a.data), 1.0 / a.data)


def sqrt(a) -> Var:
    a = as_var(a)
    out = np.sqrt(a.data)
    return _elementwise(a, out, 0.5 / out)


def square(a) -> Var:
    a = as_var(a)
    return _elementwise(a, a.data * a.data, 2.0 * a.data)


def clamp_min(a, floor: float) -> Var:
    a = as_var(a)
    mask = a.data > floor
    out = np.where(mask, a.data, floor)
    return _elementwise(a, out, mask.astype(np.float64))


def vsum(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    shape = a.data.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def pull(g):
        gg = g
        if not keepdims and axis is not None:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % len(shape) for ax in axes)
            gshape = [1 if i in axes else s for i, s in enumerate(shape)]
            gg = gg.reshape(gshape)
        return np.broadcast_to(gg, shape).copy() if np.ndim(gg) else np.full(shape, gg)

    return Var(np.asarray(out, dtype=np.float64), edges=((a, pull),))


def vmean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    size = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    s = vsum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / float(size))


def reshape(a, shape) -> Var:
    a = as_var(a)
    old = a.data.shape
    return Var(a.data.reshape(shape), edges=((a, lambda g: g.reshape(old)),))


def transpose(a, axes) -> Var:
    a = as_var(a)
    inv = np.argsort(axes)
    return Var(
        np.ascontiguousarray(a.data.transpose(axes)),
        edges=((a, lambda g: g.transpose(inv)),),
    )


def getitem(a, idx) -> Var:
    a = as_var(a)
    shape = a.data.shape

    def pull(g):
        out = np.zeros(shape, dtype=np.float64)
        out[idx] = g
        return out

    return Var(np.ascontiguousarray(a.data[idx]), edges=((a, pull),))


def concat(vars_, axis: int) -> Var:
    vars_ = [as_var(v) for v in vars_]
    sizes = [v.data.shape[axis] for v in vars_]
    splits = np.cumsum(sizes)[:-1]
    edges = []
    for i, v in enumerate(vars_):
        lo = 0 if i == 0 else splits[i - 1]
        hi = splits[i] if i < len(splits) else None
        sl = [slice(None)] * vars_[0].data.ndim
        sl[axis] = slice(lo, hi)
        sl = tuple(sl)
        edges.append((v, lambda g, sl=sl: np.ascontiguousarray(g[sl])))
    return Var(np.concatenate([v.data for v in vars_], axis=axis), edges=tuple(edges))


def _conv_pad(length: int, kernel: int, dilation: int, padding: str) -> tuple[int, int]:
    span = (kernel - 1) * dilation
    if padding == "none":
        return 0, 0
    if padding == "causal":
        return span, 0
    if padding == "symmetric":
        if kernel % 2 == 0:
            raise ShapeError("zero-symmetric padding requires an odd kernel size")
        return span // 2, span // 2
    raise ShapeError(f"unknown padding mode {padding!r}")


def conv1d(x, weight, bias=None, dilation: int = 1, padding: str = "symmetric") -> Var:
    """Dilated 1D convolution (cross-correlation form).

    ``x`` is (batch, in_channels, length), ``weight`` (out_channels,
    in_channels, kernel). Output position s sums x[c, s + j*dilation] *
    w[o, c, j] over taps j, after the requested zero padding.
    """
    x, weight = as_var(x), as_var(weight)
    if x.ndim != 3:
        raise ShapeError(f"conv1d input must be (batch, channels, length), got {x.shape}")
    b_n, c_in, length = x.data.shape
    c_out, c_w, kernel = weight.data.shape
    if c_w != c_in:
        raise ShapeError(f"conv1d channels disagree: input {c_in}, weight expects {c_w}")
    left, right = _conv_pad(length, kernel, dilation, padding)
    l_pad = length + left + right
    span = (kernel - 1) * dilation
    l_out = l_pad - span
    if l_out < 1:
        raise ShapeError(
            f"kernel span {span + 1} exceeds padded length {l_pad} (k={kernel}, d={dilation})"
        )

    if left or right:
        xp = np.zeros((b_n, c_in, l_pad), dtype=np.float64)
        xp[:, :, left : left + length] = x.data
    else:
        xp = x.data
    s0, s1, s2 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, shape=(b_n, c_in, kernel, l_out), strides=(s0, s1, s2 * dilation, s2)
    )
    # One big GEMM over the whole batch: (c_out, c_in*k) @ (c_in*k, b*l_out)
    cols_f = np.ascontiguousarray(cols.transpose(1, 2, 0, 3)).reshape(c_in * kernel, b_n * l_out)
    w_f = weight.data.reshape(c_out, c_in * kernel)
    out_f = w_f @ cols_f
    out = np.ascontiguousarray(out_f.reshape(c_out, b_n, l_out).transpose(1, 0, 2))
    if bias is not None:
        bias = as_var(bias)
        out += bias.data[None, :, None]

    def pull_w(g):
        g_f = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(c_out, b_n * l_out)
        return (g_f @ cols_f.T).reshape(c_out, c_in, kernel)

    def pull_x(g):
        g_f = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(c_out, b_n * l_out)
        gcols = (w_f.T @ g_f).reshape(c_in, kernel, b_n, l_out).transpose(2, 0, 1, 3)
        gxp = np.zeros((b_n, c_in, l_pad), dtype=np.float64)
        for j in range(kernel):
            gxp[:, :, j * dilation : j * dilation + l_out] += gcols[:, :, j, :]
        return gxp[:, :, left : left + length] if (left or right) else gxp

    edges = [(x, pull_x), (weight, pull_w)]
    if bias is not None:
        edges.append((bias, lambda g: g.sum(axis=(0, 2))))
    return Var(out, edges=tuple(edges))


def avg_pool1d(x, stride: int) -> Var:
    """Average over non-overlapping windows; a trailing remainder forms
    its own short window so any length is poolable."""
    x = as_var(x)
    if stride < 1:
        raise ShapeError(f"pooling stride must be >= 1, got {stride}")
    b_n, c_n, length = x.data.shape
    n_full = length // stride
    if n_full < 1:
        raise ShapeError(f"cannot pool length {length} with stride {stride}")
    rem = length - n_full * stride
    full = x.data[:, :, : n_full * stride].reshape(b_n, c_n, n_full, stride).mean(axis=3)
    if rem:
        tail = x.data[:, :, n_full * stride :].mean(axis=2, keepdims=True)
        out = np.concatenate([full, tail], axis=2)
    else:
        out = full

    def pull(g):
        gx = np.empty((b_n, c_n, length), dtype=np.float64)
        gfull = np.repeat(g[:, :, :n_full] / stride, stride, axis=2)
        gx[:, :, : n_full * stride] = gfull
        if rem:
            gx[:, :, n_full * stride :] = g[:, :, n_full:][:, :, [0]] / rem
        return gx

    return Var(out, edges=((x, pull),))


def upsample1d(x, stride: int) -> Var:
    """Repeat each value ``stride`` times along the length axis."""
    x = as_var(x)
    if stride < 1:
        raise ShapeError(f"upsample stride must be >= 1, got {stride}")
    b_n, c_n, length = x.data.shape
    out = np.repeat(x.data, stride, axis=2)

    def pull(g):
        return g.reshape(b_n, c_n, length, stride).sum(axis=3)

    return Var(out, edges=((x, pull),))
