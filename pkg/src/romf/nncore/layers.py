"""Layer primitives over the autodiff core.

Every trainable layer draws its parameters from a shared flat
:class:`ParamStore`, so the optimizer updates one contiguous float64
array and checkpoints serialize a single block. Construction is
two-phase: layers register parameter initializers against the store,
and ``store.finalize()`` allocates and binds the views.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ConfigError, ShapeError, StateError
from . import autodiff as ad
from .autodiff import Var

ACTIVATIONS: dict[str, Callable[..., Var]] = {
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "relu": ad.relu,
    "leaky_relu": ad.leaky_relu,
    "swish": ad.swish,
    "softplus": ad.softplus,
}

LEAKY_SLOPE = 0.01
BATCHNORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.1
WEIGHT_NORM_FLOOR = 1e-12


@dataclass
class LayerSpec:
    """Architecture descriptor for a single layer."""

    kind: str
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.params}


def activation_apply(x, fn: str):
    """Apply a named activation elementwise; accepts Var or ndarray."""
    if fn not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {fn!r}; supported: {sorted(ACTIVATIONS)}")
    wrap = ACTIVATIONS[fn]
    if fn == "leaky_relu":
        out = wrap(ad.as_var(x), LEAKY_SLOPE)
    else:
        out = wrap(ad.as_var(x))
    return out if isinstance(x, Var) else out.data


def weight_norm_apply(direction: Var | np.ndarray, gain: Var | np.ndarray):
    """Effective weights w = g * v / ||v|| with per-filter norms.

    ``direction`` is (out, in, k) or (out, fan); ``gain`` has one entry
    per output filter. Norms are floored at 1e-12 so a zero direction
    cannot produce NaNs. Gradients flow to both operands when Vars are
    given.
    """
    want_array = not isinstance(direction, Var)
    v = ad.as_var(direction)
    g = ad.as_var(gain)
    axes = tuple(range(1, v.ndim))
    if g.data.shape != (v.data.shape[0],):
        raise ShapeError(f"gain must have one entry per filter: {g.data.shape} vs {v.data.shape}")
    norm = ad.sqrt(ad.clamp_min(ad.vsum(ad.square(v), axis=axes, keepdims=True), WEIGHT_NORM_FLOOR**2))
    gshape = (v.data.shape[0],) + (1,) * (v.ndim - 1)
    w = ad.mul(v, ad.div(ad.reshape(g, gshape), norm))
    return w.data if want_array else w


class Parameter:
    """Handle to a contiguous slice of a ParamStore's flat array."""

    __slots__ = ("name", "shape", "offset", "size", "data", "var")

    def __init__(self, name: str, shape: tuple):
        self.name = name
        self.shape = tuple(shape)
        self.size = int(np.prod(shape)) if shape else 1
        self.offset = -1
        self.data: np.ndarray | None = None
        self.var: Var | None = None


class Buffer:
    """Non-trainable state (batch-norm running stats) stored alongside."""

    __slots__ = ("name", "shape", "offset", "size", "data")

    def __init__(self, name: str, shape: tuple):
        self.name = name
        self.shape = tuple(shape)
        self.size = int(np.prod(shape)) if shape else 1
        self.offset = -1
        self.data: np.ndarray | None = None


class ParamStore:
    """Flat parameter + gradient storage with per-layer offsets."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self._params: list[tuple[Parameter, np.ndarray]] = []
        self._buffers: list[tuple[Buffer, np.ndarray]] = []
        self.params: np.ndarray | None = None
        self.grads: np.ndarray | None = None
        self.buffers: np.ndarray = np.zeros(0)
        self.finalized = False

    def add_param(self, name: str, init: np.ndarray) -> Parameter:
        if self.finalized:
            raise StateError("cannot add parameters to a finalized store")
        p = Parameter(name, init.shape)
        self._params.append((p, np.asarray(init, dtype=np.float64)))
        return p

    def add_buffer(self, name: str, init: np.ndarray) -> Buffer:
        if self.finalized:
            raise StateError("cannot add buffers to a finalized store")
        b = Buffer(name, init.shape)
        self._buffers.append((b, np.asarray(init, dtype=np.float64)))
        return b

    def finalize(self) -> "ParamStore":
        total = sum(p.size for p, _ in self._params)
        self.params = np.zeros(total, dtype=np.float64)
        self.grads = np.zeros(total, dtype=np.float64)
        off = 0
        for p, init in self._params:
            self.params[off : off + p.size] = init.ravel()
            p.offset = off
            p.data = self.params[off : off + p.size].reshape(p.shape)
            p.var = Var(p.data, param=True)
            off += p.size
        total_b = sum(b.size for b, _ in self._buffers)
        self.buffers = np.zeros(total_b, dtype=np.float64)
        off = 0
        for b, init in self._buffers:
            self.buffers[off : off + b.size] = init.ravel()
            b.offset = off
            b.data = self.buffers[off : off + b.size].reshape(b.shape)
            off += b.size
        self.finalized = True
        return self

    @property
    def size(self) -> int:
        return 0 if self.params is None else self.params.size

    def offsets(self) -> list[tuple[str, int, int]]:
        return [(p.name, p.offset, p.offset + p.size) for p, _ in self._params]

    def zero_grads(self) -> None:
        self.grads[:] = 0.0
        for p, _ in self._params:
            p.var.grad = None

    def collect_grads(self) -> np.ndarray:
        """Copy per-parameter autodiff gradients into the flat array."""
        for p, _ in self._params:
            if p.var.grad is not None:
                self.grads[p.offset : p.offset + p.size] = p.var.grad.ravel()
        return self.grads

    def state_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.params.copy(), self.buffers.copy()

    def load_state(self, params: np.ndarray, buffers: np.ndarray | None = None) -> None:
        if params.size != self.params.size:
            raise ShapeError(f"parameter count mismatch: {params.size} vs {self.params.size}")
        self.params[:] = params
        if buffers is not None:
            if buffers.size != self.buffers.size:
                raise ShapeError(f"buffer count mismatch: {buffers.size} vs {self.buffers.size}")
            self.buffers[:] = buffers


def glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    """Affine map y = W x + b on (batch, in) arrays."""

    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int):
        if n_in < 1 or n_out < 1:
            raise ConfigError("dense widths must be >= 1")
        self.n_in, self.n_out = n_in, n_out
        self.w = store.add_param(f"{name}.w", glorot_uniform(store.rng, (n_in, n_out), n_in, n_out))
        self.b = store.add_param(f"{name}.b", np.zeros(n_out))

    def __call__(self, x) -> Var:
        x = ad.as_var(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense expects (batch, {self.n_in}), got {x.shape}")
        return ad.add(ad.matmul(x, self.w.var), self.b.var)

    def spec(self) -> LayerSpec:
        return LayerSpec("dense", {"in": self.n_in, "out": self.n_out})


class Conv1D:
    """1D convolution with optional dilation, padding mode and weight norm."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        c_in: int,
        c_out: int,
        kernel: int,
        dilation: int = 1,
        padding: str = "symmetric",
        weight_norm: bool = False,
        bias: bool = True,
    ):
        if dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {dilation}")
        if c_in < 1 or c_out < 1:
            raise ConfigError("conv channel counts must be >= 1")
        if padding == "symmetric" and kernel % 2 == 0:
            raise ConfigError("zero-symmetric padding requires odd kernel size")
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.dilation, self.padding, self.weight_norm = dilation, padding, weight_norm
        w0 = glorot_uniform(store.rng, (c_out, c_in, kernel), c_in * kernel, c_out * kernel)
        if weight_norm:
            self.v = store.add_param(f"{name}.v", w0)
            self.g = store.add_param(f"{name}.g", np.sqrt((w0 * w0).sum(axis=(1, 2))))
        else:
            self.w = store.add_param(f"{name}.w", w0)
        self.b = store.add_param(f"{name}.b", np.zeros(c_out)) if bias else None

    def __call__(self, x) -> Var:
        w = weight_norm_apply(self.v.var, self.g.var) if self.weight_norm else self.w.var
        return ad.conv1d(
            x, w, None if self.b is None else self.b.var,
            dilation=self.dilation, padding=self.padding,
        )

    def spec(self) -> LayerSpec:
        return LayerSpec(
            "conv1d",
            {
                "in": self.c_in,
                "out": self.c_out,
                "kernel": self.kernel,
                "dilation": self.dilation,
                "padding": self.padding,
                "weight_norm": self.weight_norm,
                "bias": self.b is not None,
            },
        )


class LSTMCell:
    """Gated recurrent cell; gates read both the input and the previous
    hidden state (the affine maps act on the pair (x, h))."""

    def __init__(self, store: ParamStore, name: str, n_in: int, hidden: int):
        if n_in < 1 or hidden < 1:
            raise ConfigError("LSTM widths must be >= 1")
        self.n_in, self.hidden = n_in, hidden
        lim = 1.0 / np.sqrt(hidden)
        self.wx = store.add_param(f"{name}.wx", store.rng.uniform(-lim, lim, (n_in, 4 * hidden)))
        self.wh = store.add_param(f"{name}.wh", store.rng.uniform(-lim, lim, (hidden, 4 * hidden)))
        self.b = store.add_param(f"{name}.b", store.rng.uniform(-lim, lim, 4 * hidden))

    def step(self, x, h_prev, c_prev) -> tuple[Var, Var]:
        x = ad.as_var(x)
        h_prev, c_prev = ad.as_var(h_prev), ad.as_var(c_prev)
        if x.shape[-1] != self.n_in or h_prev.shape[-1] != self.hidden:
            raise ShapeError(
                f"LSTM step expects input width {self.n_in} and hidden {self.hidden}, "
                f"got {x.shape} / {h_prev.shape}"
            )
        gates = ad.add(ad.add(ad.matmul(x, self.wx.var), ad.matmul(h_prev, self.wh.var)), self.b.var)
        h_n = self.hidden
        zi = ad.sigmoid(gates[:, 0 * h_n : 1 * h_n])
        zf = ad.sigmoid(gates[:, 1 * h_n : 2 * h_n])
        za = ad.tanh(gates[:, 2 * h_n : 3 * h_n])
        zo = ad.sigmoid(gates[:, 3 * h_n : 4 * h_n])
        c = ad.add(ad.mul(zf, c_prev), ad.mul(zi, za))
        h = ad.mul(zo, ad.tanh(c))
        return h, c

    def spec(self) -> LayerSpec:
        return LayerSpec("lstm_cell", {"in": self.n_in, "hidden": self.hidden})


class BatchNorm1D:
    """Per-channel normalization on (batch, channels, length) arrays.

    Train mode normalizes with batch statistics (population variance)
    and updates running stats by EMA; eval mode uses the running stats.
    """

    def __init__(self, store: ParamStore, name: str, channels: int):
        self.channels = channels
        self.gamma = store.add_param(f"{name}.gamma", np.ones(channels))
        self.beta = store.add_param(f"{name}.beta", np.zeros(channels))
        self.run_mean = store.add_buffer(f"{name}.run_mean", np.zeros(channels))
        self.run_var = store.add_buffer(f"{name}.run_var", np.ones(channels))

    def __call__(self, x, train: bool) -> Var:
        x = ad.as_var(x)
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ShapeError(f"batch norm expects (batch, {self.channels}, length), got {x.shape}")
        cshape = (1, self.channels, 1)
        if train:
            if x.shape[0] < 2:
                raise ConfigError("batch norm in train mode needs batch size >= 2")
            mu = ad.vmean(x, axis=(0, 2), keepdims=True)
            xc = ad.sub(x, mu)
            var = ad.vmean(ad.square(xc), axis=(0, 2), keepdims=True)
            m = BATCHNORM_MOMENTUM
            self.run_mean.data[:] = (1 - m) * self.run_mean.data + m * mu.data.ravel()
            self.run_var.data[:] = (1 - m) * self.run_var.data + m * var.data.ravel()
            xhat = ad.div(xc, ad.sqrt(ad.add(var, BATCHNORM_EPS)))
        else:
            denom = np.sqrt(self.run_var.data + BATCHNORM_EPS).reshape(cshape)
            xhat = ad.div(ad.sub(x, self.run_mean.data.reshape(cshape)), denom)
        return ad.add(
            ad.mul(xhat, ad.reshape(self.gamma.var, cshape)),
            ad.reshape(self.beta.var, cshape),
        )

    def spec(self) -> LayerSpec:
        return LayerSpec("batch_norm1d", {"channels": self.channels})


def dense_forward(x: np.ndarray, layer: Dense) -> np.ndarray:
    """Plain-array forward through a dense layer (no tape kept)."""
    y = layer(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return y.data[0] if np.ndim(x) == 1 else y.data


def conv1d_forward(v: np.ndarray, layer: Conv1D) -> np.ndarray:
    """Plain-array forward: ``v`` is (channels, length)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise ShapeError(f"expected (channels, length), got {v.shape}")
    return layer(v[None]).data[0]


def lstm_cell_step(
    x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, cell: LSTMCell
) -> tuple[np.ndarray, np.ndarray]:
    """Single-vector LSTM step used by tests and the docs."""
    h, c = cell.step(
        np.asarray(x, dtype=np.float64)[None],
        np.asarray(h_prev, dtype=np.float64)[None],
        np.asarray(c_prev, dtype=np.float64)[None],
    )
    return h.data[0], c.data[0]


def batch_norm_forward(v: np.ndarray, layer: BatchNorm1D, mode: str = "train") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    return layer(np.asarray(v, dtype=np.float64), train=mode == "train").data
