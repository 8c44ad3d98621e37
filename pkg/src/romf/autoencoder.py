"""Spatial compression of snapshots: MLP and convolutional autoencoders.

Both map a scaled snapshot v in [0,1]^n_s to a latent z of dimension
m << n_s and back. The convolutional encoder never flattens: pooling
strides shrink the length to m and a kernel-1 convolution collapses the
channels, so the latent is itself a coarse spatial field. Latents pass
through a sigmoid, keeping them in the scaled-data range that the
forecasters' tanh output heads can reach.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .datasets import Scaler, SnapshotMatrix, ae_split
from .errors import ConfigError, ShapeError
from .nncore import BatchNorm1D, Conv1D, Dense, ParamStore, activation_apply
from .nncore import autodiff as ad
from .nncore.network import Network
from .storage import read_checkpoint, write_checkpoint
from .training import TrainHistory, fit

SCALED_RANGE_SLACK = 0.5


@dataclass
class MlpAeSpec:
    """Dense encoder [n_s, *hidden, m] with the decoder mirrored."""

    n_s: int
    latent: int
    hidden: tuple = (100, 50)
    activation: str = "relu"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.latent >= self.n_s:
            raise ConfigError(f"latent {self.latent} must compress below n_s={self.n_s}")

    def to_json(self) -> dict:
        return {
            "kind": "mlp",
            "n_s": self.n_s,
            "latent": self.latent,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }


@dataclass
class CaeSpec:
    """Convolutional stages (channels, pool stride) with mirrored decoder.

    The latent dimension is n_s divided by the product of pool strides;
    each stage is conv -> batch norm -> activation -> average pool.
    """

    n_s: int
    stages: tuple = ((8, 2), (32, 2))
    kernel_size: int = 5
    activation: str = "swish"

    def __post_init__(self):
        self.stages = tuple((int(c), int(s)) for c, s in self.stages)
        stride_product = int(np.prod([s for _, s in self.stages]))
        if self.n_s % stride_product != 0:
            raise ConfigError(
                f"pool strides {stride_product} must divide n_s={self.n_s} exactly"
            )
        if self.kernel_size % 2 == 0:
            raise ConfigError("CAE kernel size must be odd (length-preserving padding)")
        if self.latent >= self.n_s:
            raise ConfigError("CAE must have at least one stride > 1")

    @property
    def latent(self) -> int:
        return self.n_s // int(np.prod([s for _, s in self.stages]))

    def to_json(self) -> dict:
        return {
            "kind": "cae",
            "n_s": self.n_s,
            "stages": [list(st) for st in self.stages],
            "kernel_size": self.kernel_size,
            "activation": self.activation,
        }


def ae_spec_from_json(obj: dict):
    kind = obj.get("kind")
    if kind == "mlp":
        return MlpAeSpec(
            n_s=int(obj["n_s"]),
            latent=int(obj["latent"]),
            hidden=tuple(obj.get("hidden", (100, 50))),
            activation=obj.get("activation", "relu"),
        )
    if kind == "cae":
        return CaeSpec(
            n_s=int(obj["n_s"]),
            stages=tuple(tuple(st) for st in obj["stages"]),
            kernel_size=int(obj.get("kernel_size", 5)),
            activation=obj.get("activation", "swish"),
        )
    raise ConfigError(f"unknown autoencoder kind {kind!r}")


class MlpAutoencoder(Network):
    def __init__(self, spec: MlpAeSpec, seed: int = 0):
        store = ParamStore(seed)
        widths = (spec.n_s, *spec.hidden, spec.latent)
        self.enc = [
            Dense(store, f"enc{i}", widths[i], widths[i + 1]) for i in range(len(widths) - 1)
        ]
        self.dec = [
            Dense(store, f"dec{i}", widths[-1 - i], widths[-2 - i]) for i in range(len(widths) - 1)
        ]
        store.finalize()
        self.spec = spec
        super().__init__(store)

    def encode_var(self, x) -> ad.Var:
        h = ad.as_var(x)
        for layer in self.enc[:-1]:
            h = activation_apply(layer(h), self.spec.activation)
        return ad.sigmoid(self.enc[-1](h))

    def decode_var(self, z) -> ad.Var:
        h = ad.as_var(z)
        for layer in self.dec[:-1]:
            h = activation_apply(layer(h), self.spec.activation)
        return ad.sigmoid(self.dec[-1](h))

    def forward(self, x, train: bool = True) -> ad.Var:
        return self.decode_var(self.encode_var(x))


class ConvAutoencoder(Network):
    def __init__(self, spec: CaeSpec, seed: int = 0):
        store = ParamStore(seed)
        k = spec.kernel_size
        chans = [1] + [c for c, _ in spec.stages]
        self.enc_convs, self.enc_norms, self.pool_strides = [], [], []
        for i, (c, s) in enumerate(spec.stages):
            self.enc_convs.append(Conv1D(store, f"enc{i}", chans[i], c, k))
            self.enc_norms.append(BatchNorm1D(store, f"enc{i}.bn", c))
            self.pool_strides.append(s)
        self.collapse = Conv1D(store, "collapse", chans[-1], 1, 1)
        self.expand = Conv1D(store, "expand", 1, chans[-1], 1)
        self.dec_convs, self.dec_norms = [], []
        for i in range(len(spec.stages) - 1, -1, -1):
            c_out = chans[i]
            self.dec_convs.append(Conv1D(store, f"dec{i}", chans[i + 1], c_out, k))
            self.dec_norms.append(BatchNorm1D(store, f"dec{i}.bn", c_out) if i > 0 else None)
        store.finalize()
        self.spec = spec
        super().__init__(store)

    def encode_var(self, x, train: bool = False) -> ad.Var:
        h = ad.as_var(x)
        h = ad.reshape(h, (h.shape[0], 1, h.shape[1]))
        for conv, norm, stride in zip(self.enc_convs, self.enc_norms, self.pool_strides):
            h = activation_apply(norm(conv(h), train=train), self.spec.activation)
            h = ad.avg_pool1d(h, stride)
        z = ad.sigmoid(self.collapse(h))
        return ad.reshape(z, (z.shape[0], z.shape[2]))

    def decode_var(self, z, train: bool = False) -> ad.Var:
        h = ad.as_var(z)
        h = self.expand(ad.reshape(h, (h.shape[0], 1, h.shape[1])))
        strides = self.pool_strides[::-1]
        for i, (conv, norm) in enumerate(zip(self.dec_convs, self.dec_norms)):
            h = conv(ad.upsample1d(h, strides[i]))
            if norm is not None:
                h = activation_apply(norm(h, train=train), self.spec.activation)
        out = ad.sigmoid(h)
        return ad.reshape(out, (out.shape[0], out.shape[2]))

    def forward(self, x, train: bool = True) -> ad.Var:
        return self.decode_var(self.encode_var(x, train=train), train=train)


def build_autoencoder(spec, seed: int = 0) -> Network:
    if isinstance(spec, dict):
        spec = ae_spec_from_json(spec)
    if isinstance(spec, MlpAeSpec):
        return MlpAutoencoder(spec, seed)
    return ConvAutoencoder(spec, seed)


@dataclass
class TrainedAutoencoder:
    """A fitted model plus the scaler it was trained under."""

    model: Network
    scaler: Scaler
    seed: int
    history: TrainHistory = field(default_factory=TrainHistory)
    validation_relative_l2: float = float("nan")

    @property
    def spec(self):
        return self.model.spec

    @property
    def latent_dim(self) -> int:
        return self.spec.latent

    def encode(self, v: np.ndarray) -> np.ndarray:
        """Scaled snapshot(s) (n_s,) or (B, n_s) -> latent(s)."""
        v = np.asarray(v, dtype=np.float64)
        single = v.ndim == 1
        batch = v[None] if single else v
        if batch.shape[1] != self.spec.n_s:
            raise ShapeError(f"expected snapshots of length {self.spec.n_s}, got {batch.shape}")
        lo, hi = batch.min(), batch.max()
        if lo < -SCALED_RANGE_SLACK or hi > 1.0 + SCALED_RANGE_SLACK:
            warnings.warn(
                f"encode() input range [{lo:.3g}, {hi:.3g}] is far outside [0, 1]; "
                "was the snapshot scaled?",
                stacklevel=2,
            )
        z = self.model.encode_var(batch).data
        return z[0] if single else z

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Latent(s) -> scaled snapshot(s); inverse-scale via .scaler."""
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        batch = z[None] if single else z
        if batch.shape[1] != self.latent_dim:
            raise ShapeError(f"expected latents of length {self.latent_dim}, got {batch.shape}")
        v = self.model.decode_var(batch).data
        return v[0] if single else v

    def encode_matrix(self, scaled_matrix: np.ndarray) -> np.ndarray:
        """(n_s, T) scaled snapshot matrix -> (m, T) latent matrix."""
        return self.encode(scaled_matrix.T).T

    def decode_matrix(self, latents: np.ndarray) -> np.ndarray:
        """(m, steps) latents -> (n_s, steps) unscaled snapshots."""
        return self.scaler.invert(self.decode(latents.T).T)

    def save(self, path, epoch: int | None = None) -> None:
        write_checkpoint(
            path,
            self.spec.to_json(),
            *self.model.store.state_arrays(),
            seed=self.seed,
            epoch=self.history.best_epoch if epoch is None else epoch,
            history=self.history.to_json(),
            extra={
                "role": "autoencoder",
                "scaler": {"lo": self.scaler.lo, "hi": self.scaler.hi},
                "validation_relative_l2": float(self.validation_relative_l2),
            },
        )


def load_autoencoder(path, expect_spec: dict | None = None) -> TrainedAutoencoder:
    header = read_checkpoint(path, expect_spec=expect_spec)
    model = build_autoencoder(header["spec"], seed=header["seed"])
    model.store.load_state(header["params"], header["buffers"])
    trained = TrainedAutoencoder(
        model=model,
        scaler=Scaler(header["scaler"]["lo"], header["scaler"]["hi"]),
        seed=header["seed"],
    )
    trained.validation_relative_l2 = header.get("validation_relative_l2", float("nan"))
    return trained


def train_autoencoder(
    snapshots: SnapshotMatrix,
    spec,
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    n_train: int,
    n_val: int,
    split_seed: int = 0,
    log_fn=None,
) -> TrainedAutoencoder:
    """Fit on a seeded random column split, keep the best-validation epoch.

    Returns the model with validation relative L2 (unscaled space)
    recorded for reporting.
    """
    if isinstance(spec, dict):
        spec = ae_spec_from_json(spec)
    if spec.n_s != snapshots.n_s:
        raise ConfigError(f"spec n_s={spec.n_s} but dataset has {snapshots.n_s} nodes")
    train_idx, val_idx = ae_split(snapshots.t_steps, n_train, n_val, split_seed)
    scaled = snapshots.scaled().T  # (T, n_s) samples
    x_train, x_val = scaled[train_idx], scaled[val_idx]
    model = build_autoencoder(spec, seed)
    history = fit(
        model,
        x_train,
        x_train,
        x_val,
        x_val,
        epochs=epochs,
        batch_size=batch_size,
        lr=lr,
        seed=seed,
        log_fn=log_fn,
        context=f"autoencoder {spec.to_json()['kind']}",
    )
    trained = TrainedAutoencoder(model=model, scaler=snapshots.scaler, seed=seed, history=history)
    recon = snapshots.scaler.invert(trained.decode(trained.encode(x_val)))
    truth = snapshots.values.T[val_idx]
    trained.validation_relative_l2 = float(
        np.linalg.norm(truth - recon) / np.linalg.norm(truth)
    )
    return trained
