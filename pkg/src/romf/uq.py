"""Epistemic uncertainty: variance-informed ensembles + unscented transform.

Each ensemble member is a dual-head forecaster emitting a latent mean
and a raw variance, trained under the Gaussian negative log-likelihood.
Member predictions are pooled into a single Gaussian via the mixture
moment formulas, and the latent Gaussian is pushed through the decoder
with deterministic sigma points.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import TrainedAutoencoder
from .datasets import WindowedDataset
from .errors import ConfigError, NumericError, ShapeError
from .forecast import (
    ForecasterSpec,
    TrainedForecaster,
    build_forecaster,
    forecaster_spec_from_json,
    train_forecaster,
)
from .nncore import autodiff as ad
from .storage import read_json, spec_hash, write_json

VARIANCE_FLOOR = 1e-6
RETRY_SEED_SHIFT = 1000


def softplus_variance(rho: np.ndarray) -> np.ndarray:
    """sigma^2 = softplus(rho) + floor, strictly positive."""
    rho = np.asarray(rho, dtype=np.float64)
    out = np.where(rho > 30.0, rho, np.log1p(np.exp(np.minimum(rho, 30.0))))
    return out + VARIANCE_FLOOR


def nll_loss(output, target) -> ad.Var:
    """Gaussian NLL averaged over batch and components.

    ``output`` stacks [mu | rho] along the last axis (a dual-head
    forecaster's output); sigma^2 = softplus(rho) + 1e-6.
    """
    output = ad.as_var(output)
    target = np.asarray(target, dtype=np.float64)
    m = target.shape[-1]
    if output.shape[-1] != 2 * m:
        raise ShapeError(
            f"dual output must have width 2*{m}, got {output.shape[-1]}"
        )
    mu = output[..., :m]
    rho = output[..., m:]
    var = ad.add(ad.softplus(rho), VARIANCE_FLOOR)
    resid = ad.square(ad.sub(mu, target))
    per_element = ad.add(ad.mul(ad.log(var), 0.5), ad.div(resid, ad.mul(var, 2.0)))
    loss = ad.vmean(per_element)
    if not np.isfinite(loss.data):
        raise NumericError("NLL loss is non-finite")
    return loss


@dataclass
class EnsembleSpec:
    """M independently seeded copies of one dual-head architecture."""

    base: ForecasterSpec
    members: int = 10
    base_seed: int = 100

    def __post_init__(self):
        if self.members < 1:
            raise ConfigError("ensemble needs at least one member")
        if not self.base.dual:
            raise ConfigError("ensemble base spec must have a dual head")

    def member_seed(self, i: int) -> int:
        return self.base_seed + i

    def to_json(self) -> dict:
        return {
            "base": self.base.to_json(),
            "members": self.members,
            "base_seed": self.base_seed,
        }


@dataclass
class GaussianLatent:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.variance.shape:
            raise ShapeError("latent mean/variance shapes disagree")


@dataclass
class GaussianField:
    mean: np.ndarray
    variance: np.ndarray


@dataclass
class SigmaPointSet:
    """2m+1 deterministic samples matching a diagonal Gaussian's moments."""

    points: np.ndarray  # (2m+1, m)
    weights: np.ndarray  # (2m+1,)
    kappa: float


def ensemble_aggregate(means: np.ndarray, variances: np.ndarray) -> GaussianLatent:
    """First two moments of the equal-weight Gaussian mixture.

    mu* = mean_i mu_i and sigma*^2 = mean_i(sigma_i^2 + mu_i^2) - mu*^2;
    member disagreement inflates the pooled variance. Tiny negative
    values from cancellation are clamped to zero.
    """
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    variances = np.atleast_2d(np.asarray(variances, dtype=np.float64))
    if means.shape != variances.shape:
        raise ShapeError(f"means {means.shape} vs variances {variances.shape}")
    mu = means.mean(axis=0)
    second = (variances + means * means).mean(axis=0)
    var = second - mu * mu
    if np.any(var < 0):
        if np.any(var < -1e-10):
            warnings.warn(
                f"aggregated variance clamped at 0 (min {var.min():.3e})", stacklevel=2
            )
        var = np.maximum(var, 0.0)
    return GaussianLatent(mean=mu, variance=var)


def sigma_points(latent: GaussianLatent, kappa: float = 0.2) -> SigmaPointSet:
    """Symmetric sigma points for a diagonal-covariance Gaussian.

    Center point weighted kappa/(m+kappa); pairs mu +- sqrt((m+kappa)
    sigma_i^2) e_i weighted 1/(2(m+kappa)). Diagonal covariance makes
    the matrix square root the elementwise square root.
    """
    m = latent.mean.shape[0]
    if m + kappa <= 0:
        raise ConfigError(f"need m + kappa > 0, got {m} + {kappa}")
    scale = np.sqrt((m + kappa) * latent.variance)
    points = np.tile(latent.mean, (2 * m + 1, 1))
    idx = np.arange(m)
    points[idx + 1, idx] += scale
    points[idx + m + 1, idx] -= scale
    weights = np.full(2 * m + 1, 1.0 / (2.0 * (m + kappa)))
    weights[0] = kappa / (m + kappa)
    return SigmaPointSet(points=points, weights=weights, kappa=kappa)


def ut_transform(points: SigmaPointSet, transform) -> GaussianField:
    """Propagate sigma points through ``transform`` and re-estimate moments.

    ``transform`` maps a (2m+1, m) batch to (2m+1, n); only the diagonal
    of the output covariance is formed (weighted squared deviations), so
    no n x n matrix is materialized.
    """
    try:
        y = np.asarray(transform(points.points), dtype=np.float64)
    except Exception as exc:
        raise NumericError(f"decoder failed on sigma points: {exc}") from exc
    if y.shape[0] != points.points.shape[0]:
        raise ShapeError("transform must keep one row per sigma point")
    w = points.weights[:, None]
    mean = (w * y).sum(axis=0)
    dev = y - mean
    variance = (w * dev * dev).sum(axis=0)
    return GaussianField(mean=mean, variance=variance)


@dataclass
class DeepEnsemble:
    spec: EnsembleSpec
    members: list = field(default_factory=list)

    def member_predict(self, window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Stacked member outputs for one window: (M, m) means, variances."""
        m = self.spec.base.latent
        mus, sig2s = [], []
        for member in self.members:
            out = member.model.predict_window(window)
            mus.append(out[:m])
            sig2s.append(softplus_variance(out[m:]))
        return np.stack(mus), np.stack(sig2s)

    def save(self, dirpath) -> None:
        from pathlib import Path

        dirpath = Path(dirpath)
        dirpath.mkdir(parents=True, exist_ok=True)
        names = []
        for i, member in enumerate(self.members):
            name = f"member_{i:02d}.ckpt"
            member.save(dirpath / name)
            names.append(name)
        write_json(
            dirpath / "manifest.json",
            {
                "members": self.spec.members,
                "seeds": [self.spec.member_seed(i) for i in range(self.spec.members)],
                "spec_hash": spec_hash(self.spec.base.to_json()),
                "base_spec": self.spec.base.to_json(),
                "base_seed": self.spec.base_seed,
                "files": names,
            },
        )


def load_ensemble(dirpath) -> DeepEnsemble:
    from pathlib import Path

    from .forecast import load_forecaster

    dirpath = Path(dirpath)
    manifest = read_json(dirpath / "manifest.json")
    base = forecaster_spec_from_json(manifest["base_spec"])
    spec = EnsembleSpec(base=base, members=manifest["members"], base_seed=manifest["base_seed"])
    members = [
        load_forecaster(dirpath / name, expect_spec=manifest["base_spec"])
        for name in manifest["files"]
    ]
    return DeepEnsemble(spec=spec, members=members)


def ensemble_train(
    train_windows: WindowedDataset,
    val_windows: WindowedDataset,
    spec: EnsembleSpec,
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    log_fn=None,
) -> DeepEnsemble:
    """Train M members independently; a NaN member retries once with a
    shifted seed before aborting."""
    members = []
    for i in range(spec.members):
        seed = spec.member_seed(i)
        for attempt, s in enumerate((seed, seed + RETRY_SEED_SHIFT)):
            try:
                member = train_forecaster(
                    train_windows,
                    val_windows,
                    spec.base,
                    epochs=epochs,
                    batch_size=batch_size,
                    lr=lr,
                    seed=s,
                    loss_fn=nll_loss,
                    log_fn=(lambda e, tr, va, i=i: log_fn(i, e, tr, va)) if log_fn else None,
                )
                break
            except NumericError:
                if attempt == 1:
                    raise
        members.append(member)
    return DeepEnsemble(spec=spec, members=members)


@dataclass
class UqRolloutResult:
    """Per-step pooled latent Gaussians and their expanded fields."""

    latent_mean: np.ndarray  # (m, steps)
    latent_variance: np.ndarray  # (m, steps)
    field_mean: np.ndarray  # (n_s, steps)
    field_variance: np.ndarray  # (n_s, steps)
    dropped_members: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.latent_mean.shape[1]


def uq_rollout(
    ensemble: DeepEnsemble,
    seed_window: np.ndarray,
    steps: int,
    decoder: TrainedAutoencoder,
    *,
    kappa: float = 0.2,
    feedback: str = "member",
) -> UqRolloutResult:
    """Ensemble rollout with per-step unscented expansion.

    Members roll out independently, each feeding back its own mean
    (``feedback='member'``) or the pooled mean (``'aggregate'``). At
    every step the member moments are pooled and the latent Gaussian is
    decoded + inverse-scaled through sigma points. A member that goes
    non-finite is dropped from aggregation and recorded.
    """
    if feedback not in ("member", "aggregate"):
        raise ConfigError(f"feedback must be member or aggregate, got {feedback!r}")
    m = ensemble.spec.base.latent
    windows = [np.asarray(seed_window, dtype=np.float64).copy() for _ in ensemble.members]
    alive = [True] * len(ensemble.members)
    dropped = []

    def transform(z_batch):
        return decoder.scaler.invert(decoder.decode(z_batch))

    lat_mu = np.empty((m, steps))
    lat_var = np.empty((m, steps))
    n_s = decoder.spec.n_s
    fld_mu = np.empty((n_s, steps))
    fld_var = np.empty((n_s, steps))
    for j in range(steps):
        mus, sig2s = [], []
        for i, member in enumerate(ensemble.members):
            if not alive[i]:
                continue
            out = member.model.predict_window(windows[i])
            mu_i, var_i = out[:m], softplus_variance(out[m:])
            if not (np.all(np.isfinite(mu_i)) and np.all(np.isfinite(var_i))):
                alive[i] = False
                dropped.append({"member": i, "step": j})
                continue
            mus.append(mu_i)
            sig2s.append(var_i)
            if feedback == "member":
                windows[i] = np.column_stack([windows[i][:, 1:], mu_i])
        if not mus:
            raise NumericError(f"all ensemble members diverged by step {j}")
        pooled = ensemble_aggregate(np.stack(mus), np.stack(sig2s))
        if feedback == "aggregate":
            for i in range(len(ensemble.members)):
                if alive[i]:
                    windows[i] = np.column_stack([windows[i][:, 1:], pooled.mean])
        pts = sigma_points(pooled, kappa)
        fld = ut_transform(pts, transform)
        lat_mu[:, j] = pooled.mean
        lat_var[:, j] = pooled.variance
        fld_mu[:, j] = fld.mean
        fld_var[:, j] = fld.variance
    return UqRolloutResult(
        latent_mean=lat_mu,
        latent_variance=lat_var,
        field_mean=fld_mu,
        field_variance=fld_var,
        dropped_members=dropped,
    )
