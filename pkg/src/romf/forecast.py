"""Latent-sequence forecasters and the autoregressive rollout.

All models map a lookback window Z (m x n_t latent columns) to the next
latent column. The LSTM recurs over time; the temporal TCN convolves
along the time axis with causal dilated filters (latent components as
channels); the spatial TCN and the CNN convolve along the latent/space
axis with the n_t columns as channels. Dual-head variants emit (mean,
raw variance) pairs for the variance-informed ensembles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .autoencoder import TrainedAutoencoder
from .datasets import WindowedDataset
from .errors import ConfigError, ShapeError
from .nncore import Conv1D, Dense, LSTMCell, ParamStore
from .nncore import autodiff as ad
from .nncore.network import Network
from .storage import read_checkpoint, write_checkpoint
from .training import TrainHistory, fit


@dataclass
class LstmForecasterSpec:
    latent: int
    lookback: int
    layers: int = 1
    dual: bool = False

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError("LSTM needs at least one layer")

    def to_json(self) -> dict:
        return {
            "kind": "lstm",
            "latent": self.latent,
            "lookback": self.lookback,
            "layers": self.layers,
            "dual": self.dual,
        }


@dataclass
class TcnSpec:
    latent: int
    lookback: int
    axis: str = "temporal"
    channels: tuple = (64, 64, 64)
    kernel_size: int = 3
    dual: bool = False
    bias: bool = True

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.axis not in ("temporal", "spatial"):
            raise ConfigError(f"TCN axis must be temporal or spatial, got {self.axis!r}")

    def to_json(self) -> dict:
        return {
            "kind": "tcn",
            "latent": self.latent,
            "lookback": self.lookback,
            "axis": self.axis,
            "channels": list(self.channels),
            "kernel_size": self.kernel_size,
            "dual": self.dual,
            "bias": self.bias,
        }


@dataclass
class CnnForecasterSpec:
    latent: int
    lookback: int
    channels: tuple = (50, 50)
    kernel_size: int = 3
    dual: bool = False
    bias: bool = True

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.kernel_size % 2 == 0:
            raise ConfigError("CNN kernel size must be odd (length-preserving padding)")

    def to_json(self) -> dict:
        return {
            "kind": "cnn",
            "latent": self.latent,
            "lookback": self.lookback,
            "channels": list(self.channels),
            "kernel_size": self.kernel_size,
            "dual": self.dual,
            "bias": self.bias,
        }


ForecasterSpec = Union[LstmForecasterSpec, TcnSpec, CnnForecasterSpec]


def forecaster_spec_from_json(obj: dict) -> ForecasterSpec:
    kind = obj.get("kind")
    if kind == "lstm":
        return LstmForecasterSpec(
            latent=int(obj["latent"]),
            lookback=int(obj["lookback"]),
            layers=int(obj.get("layers", 1)),
            dual=bool(obj.get("dual", False)),
        )
    if kind == "tcn":
        return TcnSpec(
            latent=int(obj["latent"]),
            lookback=int(obj["lookback"]),
            axis=obj.get("axis", "temporal"),
            channels=tuple(obj.get("channels", (64, 64, 64))),
            kernel_size=int(obj.get("kernel_size", 3)),
            dual=bool(obj.get("dual", False)),
            bias=bool(obj.get("bias", True)),
        )
    if kind == "cnn":
        return CnnForecasterSpec(
            latent=int(obj["latent"]),
            lookback=int(obj["lookback"]),
            channels=tuple(obj.get("channels", (50, 50))),
            kernel_size=int(obj.get("kernel_size", 3)),
            dual=bool(obj.get("dual", False)),
            bias=bool(obj.get("bias", True)),
        )
    raise ConfigError(f"unknown forecaster kind {kind!r}")


class Forecaster(Network):
    """Common window plumbing: input batches are (B, m, n_t)."""

    spec: ForecasterSpec

    def _check_window(self, x: np.ndarray | ad.Var):
        shape = x.shape
        if len(shape) != 3 or shape[1] != self.spec.latent or shape[2] != self.spec.lookback:
            raise ShapeError(
                f"expected windows (batch, {self.spec.latent}, {self.spec.lookback}), got {shape}"
            )

    def predict_window(self, window: np.ndarray) -> np.ndarray:
        """One window (m, n_t) -> next latent (m,) or (2m,) when dual."""
        window = np.asarray(window, dtype=np.float64)
        if window.ndim != 2:
            raise ShapeError(f"window must be (m, n_t), got {window.shape}")
        return self.forward(window[None], train=False).data[0]


class LstmForecaster(Forecaster):
    """Stacked LSTM layers over the window columns + dense output head."""

    def __init__(self, spec: LstmForecasterSpec, seed: int = 0):
        store = ParamStore(seed)
        m = spec.latent
        self.cells = [LSTMCell(store, f"lstm{i}", m, m) for i in range(spec.layers)]
        self.head = Dense(store, "head", m, 2 * m if spec.dual else m)
        store.finalize()
        self.spec = spec
        super().__init__(store)

    def forward(self, x, train: bool = True) -> ad.Var:
        self._check_window(x)
        x = ad.as_var(x)
        batch, m, n_t = x.shape
        seq = [x[:, :, t] for t in range(n_t)]
        for cell in self.cells:
            h = ad.as_var(np.zeros((batch, m)))
            c = ad.as_var(np.zeros((batch, m)))
            out_seq = []
            for step in seq:
                h, c = cell.step(step, h, c)
                out_seq.append(h)
            seq = out_seq
        return self.head(seq[-1])


class _ResidualBlock:
    """Two weight-normalized convolutions plus a kernel-1 skip transform;
    output = lrelu(skip(x) + main(x)).

    TCN blocks keep ``channels`` on both convolutions and the skip. CNN
    blocks collapse the second convolution and the skip to one channel,
    so the block maps field -> field and widens the receptive radius by
    exactly (k-1)/2 nodes.
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        c_in: int,
        c_mid: int,
        c_out: int,
        kernel: int,
        dilation: int,
        padding: str,
        second_kernel: int,
        bias: bool,
    ):
        self.conv1 = Conv1D(
            store, f"{name}.conv1", c_in, c_mid, kernel,
            dilation=dilation, padding=padding, weight_norm=True, bias=bias,
        )
        self.conv2 = Conv1D(
            store, f"{name}.conv2", c_mid, c_out, second_kernel,
            dilation=dilation, padding=padding, weight_norm=True, bias=bias,
        )
        self.skip = Conv1D(store, f"{name}.skip", c_in, c_out, 1, bias=bias)

    def __call__(self, x: ad.Var) -> ad.Var:
        h = ad.leaky_relu(self.conv1(x))
        h = ad.leaky_relu(self.conv2(h))
        return ad.leaky_relu(ad.add(h, self.skip(x)))


class TcnForecaster(Forecaster):
    """Dilated causal residual blocks; dilation doubles per block.

    Temporal axis: latent components are channels and filters slide over
    the n_t time positions; the head reads the final position. Spatial
    axis: the window is transposed so the n_t columns are channels and
    filters slide over the latent nodes (causality kept for parity with
    the temporal variant even though it carries no meaning in space).
    """

    def __init__(self, spec: TcnSpec, seed: int = 0):
        store = ParamStore(seed)
        m, n_t, k = spec.latent, spec.lookback, spec.kernel_size
        c_in = m if spec.axis == "temporal" else n_t
        self.blocks = []
        for i, c in enumerate(spec.channels):
            self.blocks.append(
                _ResidualBlock(
                    store, f"block{i}", c_in, c, c, k,
                    dilation=2**i, padding="causal",
                    second_kernel=k, bias=spec.bias,
                )
            )
            c_in = c
        out_mult = 2 if spec.dual else 1
        head_out = out_mult * m if spec.axis == "temporal" else out_mult
        self.head = Conv1D(store, "head", c_in, head_out, 1, bias=spec.bias)
        store.finalize()
        self.spec = spec
        super().__init__(store)

    def forward(self, x, train: bool = True) -> ad.Var:
        self._check_window(x)
        h = ad.as_var(x)
        if self.spec.axis == "spatial":
            h = ad.transpose(h, (0, 2, 1))  # channels = n_t, length = m
        for block in self.blocks:
            h = block(h)
        out = self.head(h)
        if self.spec.axis == "temporal":
            out = out[:, :, -1]  # next-step read-off at the last time position
            mu = ad.tanh(out[:, : self.spec.latent])
            if not self.spec.dual:
                return mu
            return ad.concat([mu, out[:, self.spec.latent :]], axis=1)
        mu = ad.tanh(out[:, 0, :])
        if not self.spec.dual:
            return mu
        return ad.concat([mu, out[:, 1, :]], axis=1)


class CnnForecaster(Forecaster):
    """Residual spatial convolutions without dilation or causal padding.

    Every block collapses back to one channel before the skip addition,
    so the model is a chain of local field updates: the first block sees
    the n_t window columns as channels, later blocks refine a single
    coarse field of length m.
    """

    def __init__(self, spec: CnnForecasterSpec, seed: int = 0):
        store = ParamStore(seed)
        k = spec.kernel_size
        c_in = spec.lookback
        self.blocks = []
        for i, c in enumerate(spec.channels):
            self.blocks.append(
                _ResidualBlock(
                    store, f"block{i}", c_in, c, 1, k,
                    dilation=1, padding="symmetric",
                    second_kernel=1, bias=spec.bias,
                )
            )
            c_in = 1
        self.head = Conv1D(store, "head", c_in, 2 if spec.dual else 1, 1, bias=spec.bias)
        store.finalize()
        self.spec = spec
        super().__init__(store)

    def forward(self, x, train: bool = True) -> ad.Var:
        self._check_window(x)
        h = ad.transpose(ad.as_var(x), (0, 2, 1))  # channels = n_t, length = m
        for block in self.blocks:
            h = block(h)
        out = self.head(h)
        mu = ad.tanh(out[:, 0, :])
        if not self.spec.dual:
            return mu
        return ad.concat([mu, out[:, 1, :]], axis=1)


def build_forecaster(spec, seed: int = 0) -> Forecaster:
    if isinstance(spec, dict):
        spec = forecaster_spec_from_json(spec)
    if isinstance(spec, LstmForecasterSpec):
        return LstmForecaster(spec, seed)
    if isinstance(spec, TcnSpec):
        return TcnForecaster(spec, seed)
    if isinstance(spec, CnnForecasterSpec):
        return CnnForecaster(spec, seed)
    raise ConfigError(f"unsupported forecaster spec {type(spec).__name__}")


@dataclass
class TrainedForecaster:
    model: Forecaster
    seed: int
    history: TrainHistory = field(default_factory=TrainHistory)

    @property
    def spec(self) -> ForecasterSpec:
        return self.model.spec

    def save(self, path) -> None:
        write_checkpoint(
            path,
            self.spec.to_json(),
            *self.model.store.state_arrays(),
            seed=self.seed,
            epoch=self.history.best_epoch,
            history=self.history.to_json(),
            extra={"role": "forecaster"},
        )


def load_forecaster(path, expect_spec: dict | None = None) -> TrainedForecaster:
    header = read_checkpoint(path, expect_spec=expect_spec)
    model = build_forecaster(header["spec"], seed=header["seed"])
    model.store.load_state(header["params"], header["buffers"])
    return TrainedForecaster(model=model, seed=header["seed"])


def train_forecaster(
    train_windows: WindowedDataset,
    val_windows: WindowedDataset,
    spec,
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    loss_fn=None,
    log_fn=None,
) -> TrainedForecaster:
    """Supervised next-step training on latent windows."""
    if isinstance(spec, dict):
        spec = forecaster_spec_from_json(spec)
    model = build_forecaster(spec, seed)
    kwargs = {}
    if loss_fn is not None:
        kwargs["loss_fn"] = loss_fn
    history = fit(
        model,
        train_windows.inputs(),
        train_windows.targets(),
        val_windows.inputs(),
        val_windows.targets(),
        epochs=epochs,
        batch_size=batch_size,
        lr=lr,
        seed=seed,
        log_fn=log_fn,
        context=f"forecaster {spec.to_json()['kind']}",
        **kwargs,
    )
    return TrainedForecaster(model=model, seed=seed, history=history)


@dataclass
class RolloutResult:
    """Autoregressive prediction plus its expansion to full space."""

    latent: np.ndarray  # (m, steps)
    expanded: np.ndarray | None  # (n_s, steps) unscaled
    relative_error: np.ndarray | None  # per predicted step, vs truth
    truncated_at: int | None = None  # step index where a non-finite value appeared

    @property
    def steps(self) -> int:
        return self.latent.shape[1]


def autoregressive_rollout(
    model: Forecaster,
    seed_window: np.ndarray,
    steps: int,
    decoder: TrainedAutoencoder | None = None,
    truth: np.ndarray | None = None,
) -> RolloutResult:
    """Slide the window one step at a time, feeding predictions back.

    ``seed_window`` is (m, n_t); predictions are decoded and
    inverse-scaled when a decoder is supplied; per-step relative L2 is
    recorded against ``truth`` (n_s x steps, unscaled) when given.
    """
    window = np.asarray(seed_window, dtype=np.float64).copy()
    m, n_t = window.shape
    preds = np.empty((m, steps), dtype=np.float64)
    truncated = None
    done = 0
    for j in range(steps):
        z_next = model.predict_window(window)[:m]  # dual heads: mean half
        if not np.all(np.isfinite(z_next)):
            truncated = j
            break
        preds[:, j] = z_next
        window = np.column_stack([window[:, 1:], z_next])
        done = j + 1
    preds = preds[:, :done]
    expanded = decoder.decode_matrix(preds) if decoder is not None else None
    rel = None
    if truth is not None and expanded is not None:
        truth = np.asarray(truth, dtype=np.float64)
        if truth.shape[1] < done:
            raise ShapeError(f"truth has {truth.shape[1]} steps, rollout produced {done}")
        rel = np.linalg.norm(truth[:, :done] - expanded, axis=0) / np.linalg.norm(
            truth[:, :done], axis=0
        )
    return RolloutResult(latent=preds, expanded=expanded, relative_error=rel, truncated_at=truncated)
