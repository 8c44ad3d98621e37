"""Analytical benchmark snapshots, scaling and lookback windowing.

Two 1D advection-dominated problems are generated in closed form: a
viscous Burgers' front and Stoker's wet-bed dam break. Snapshots are
columns of an (n_s x T) matrix sampled on uniform space/time grids
including both endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError

EXP_OVERFLOW = 700.0


@dataclass
class BurgersConfig:
    """Viscous Burgers' benchmark on [0, L] x [0, T_max].

    The solution is u(x,t) = (x/(t+1)) / (1 + sqrt((t+1)/t0) *
    exp(Re x^2/(4t+4))) with t0 = exp(Re/8); nu = 1/Re.
    """

    length: float = 1.0
    t_max: float = 2.0
    n_s: int = 200
    t_steps: int = 250
    re: float = 300.0

    def __post_init__(self):
        if self.n_s < 2 or self.t_steps < 2:
            raise ConfigError("burgers grid needs n_s >= 2 and t_steps >= 2")
        if self.re <= 0:
            raise ConfigError(f"Reynolds number must be positive, got {self.re}")

    @property
    def nu(self) -> float:
        return 1.0 / self.re

    @property
    def t0(self) -> float:
        return float(np.exp(self.re / 8.0))


@dataclass
class StokerConfig:
    """Wet-bed dam break: upstream depth h_up over [0, x0], downstream
    h_ds, released at t=0."""

    length: float = 100.0
    x0: float = 50.0
    n_s: int = 1000
    t_steps: int = 450
    t_max: float = 3.6
    h_up: float = 10.0
    h_ds: float = 1.0
    g: float = 9.81

    def __post_init__(self):
        if not (self.h_up > self.h_ds > 0):
            raise ConfigError("h_up must exceed h_ds and both must be positive")
        if not (0 < self.x0 < self.length):
            raise ConfigError("dam position x0 must lie strictly inside the domain")
        if self.n_s < 2 or self.t_steps < 2:
            raise ConfigError("stoker grid needs n_s >= 2 and t_steps >= 2")


@dataclass
class StokerMiddleState:
    """Constant plateau between the rarefaction tail and the bore."""

    c_m: float
    h_m: float
    residual: float


@dataclass
class Scaler:
    """Affine map of the dataset's global [lo, hi] onto [0, 1]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ConfigError(f"degenerate scaler: max {self.hi} <= min {self.lo}")

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.lo) / (self.hi - self.lo)

    def invert(self, scaled: np.ndarray) -> np.ndarray:
        return np.asarray(scaled, dtype=np.float64) * (self.hi - self.lo) + self.lo

    @classmethod
    def fit(cls, values: np.ndarray) -> "Scaler":
        return cls(float(np.min(values)), float(np.max(values)))


@dataclass
class SnapshotMatrix:
    """Full-order solution field; column i is the snapshot at times[i]."""

    values: np.ndarray
    x: np.ndarray
    times: np.ndarray
    scaler: Scaler
    problem: str = "unknown"
    config: dict = field(default_factory=dict)

    @property
    def n_s(self) -> int:
        return self.values.shape[0]

    @property
    def t_steps(self) -> int:
        return self.values.shape[1]

    def scaled(self) -> np.ndarray:
        return self.scaler.apply(self.values)


def burgers_initial(x, config: BurgersConfig):
    """Initial profile x / (1 + sqrt(1/t0) exp(Re x^2 / 4))."""
    return burgers_solution(x, 0.0, config)


def burgers_solution(x, t, config: BurgersConfig):
    """Closed-form solution; overflow-safe for large Re x^2/(4t+4).

    The sqrt((t+1)/t0) factor is folded into the exponent so neither
    factor overflows on its own; beyond exp(700) the denominator is
    effectively infinite and the solution 0.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    arg = config.re * x * x / (4.0 * t + 4.0)
    log_pref = 0.5 * (np.log(t + 1.0) - config.re / 8.0)
    expo = arg + log_pref
    safe = expo <= EXP_OVERFLOW
    denom = 1.0 + np.exp(np.where(safe, expo, 0.0))
    u = np.where(safe, (x / (t + 1.0)) / denom, 0.0)
    return u if u.ndim else float(u)


def stoker_middle_state(config: StokerConfig) -> StokerMiddleState:
    """Solve the jump condition for the middle-state celerity c_m.

    Root of f(c) = -8 g h_ds c^2 (g h_up - c^2)^2
                   + (c^2 - g h_ds)^2 (c^2 + g h_ds)
    bracketed by the downstream/upstream celerities, found by bisection
    to |dc| < 1e-12. The reported residual is f normalized by (g h_up)^3
    so it is dimensionless and comparable across configurations.
    """
    g, h_up, h_ds = config.g, config.h_up, config.h_ds

    def f(c):
        c2 = c * c
        return -8.0 * g * h_ds * c2 * (g * h_up - c2) ** 2 + (c2 - g * h_ds) ** 2 * (c2 + g * h_ds)

    lo, hi = np.sqrt(g * h_ds), np.sqrt(g * h_up)
    if f(lo) * f(hi) > 0:
        raise NumericError(
            f"middle-state equation has no sign change on ({lo:.6g}, {hi:.6g}); "
            "check h_up/h_ds"
        )
    while hi - lo > 1e-13:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
    c_m = 0.5 * (lo + hi)
    scale = (g * h_up) ** 3
    return StokerMiddleState(c_m=c_m, h_m=c_m * c_m / g, residual=f(c_m) / scale)


def stoker_solution(x, t, config: StokerConfig, middle: StokerMiddleState | None = None):
    """Four-branch water depth h(x, t); step function at t = 0.

    Branch edges: x_A = x0 - t sqrt(g h_up) (rarefaction head),
    x_B = x0 + t (2 sqrt(g h_up) - 3 c_m) (rarefaction tail),
    x_C = x0 + 2 t c_m^2 (sqrt(g h_up) - c_m) / (c_m^2 - g h_ds) (bore).
    The rarefaction branch reads (4/9g)(sqrt(g h_up) - (x-x0)/(2t))^2;
    both x_B and the (x-x0) shift differ from the benchmark write-up we
    follow, which prints x_B without the factor 2 and the rarefaction
    in x/2t; only the corrected forms join the branches continuously.
    """
    if middle is None:
        middle = stoker_middle_state(config)
    x = np.asarray(x, dtype=np.float64)
    t = float(t)
    if t <= 0.0:
        return np.where(x < config.x0, config.h_up, config.h_ds)
    g, h_up, h_ds, x0 = config.g, config.h_up, config.h_ds, config.x0
    c_up = np.sqrt(g * h_up)
    c_m = middle.c_m
    x_a = x0 - t * c_up
    x_b = x0 + t * (2.0 * c_up - 3.0 * c_m)
    x_c = x0 + t * 2.0 * c_m**2 * (c_up - c_m) / (c_m**2 - g * h_ds)
    rarefaction = (4.0 / (9.0 * g)) * (c_up - (x - x0) / (2.0 * t)) ** 2
    h = np.where(
        x <= x_a,
        h_up,
        np.where(x <= x_b, rarefaction, np.where(x <= x_c, middle.h_m, h_ds)),
    )
    return h if h.ndim else float(h)


def stoker_wave_positions(t: float, config: StokerConfig, middle: StokerMiddleState) -> tuple[float, float, float]:
    c_up = np.sqrt(config.g * config.h_up)
    x_a = config.x0 - t * c_up
    x_b = config.x0 + t * (2.0 * c_up - 3.0 * middle.c_m)
    x_c = config.x0 + t * 2.0 * middle.c_m**2 * (c_up - middle.c_m) / (
        middle.c_m**2 - config.g * config.h_ds
    )
    return x_a, x_b, x_c


def generate_snapshots(config: BurgersConfig | StokerConfig) -> SnapshotMatrix:
    """Evaluate the chosen closed form on its uniform space-time grid."""
    if isinstance(config, BurgersConfig):
        x = np.linspace(0.0, config.length, config.n_s)
        times = np.linspace(0.0, config.t_max, config.t_steps)
        values = burgers_solution(x[:, None], times[None, :], config)
        problem = "burgers"
        echo = {"re": config.re, "length": config.length, "t_max": config.t_max}
    elif isinstance(config, StokerConfig):
        x = np.linspace(0.0, config.length, config.n_s)
        times = np.linspace(0.0, config.t_max, config.t_steps)
        middle = stoker_middle_state(config)
        values = np.column_stack([stoker_solution(x, t, config, middle) for t in times])
        problem = "stoker"
        echo = {
            "h_up": config.h_up,
            "h_ds": config.h_ds,
            "g": config.g,
            "x0": config.x0,
            "length": config.length,
            "t_max": config.t_max,
        }
    else:
        raise ConfigError(f"unknown problem config type {type(config).__name__}")
    echo.update({"n_s": config.n_s, "t_steps": config.t_steps})
    return SnapshotMatrix(
        values=values,
        x=x,
        times=times,
        scaler=Scaler.fit(values),
        problem=problem,
        config=echo,
    )


def scaler_apply(values, scaler: Scaler):
    return scaler.apply(values)


def scaler_invert(values, scaler: Scaler):
    return scaler.invert(values)


@dataclass
class WindowedDataset:
    """Sliding lookback windows over the columns of a (rows x T) matrix.

    Sample k pairs input columns [k, k+n_t) with target column k+n_t;
    the test split instead holds one window whose target is every
    remaining column.
    """

    matrix: np.ndarray
    starts: np.ndarray
    lookback: int
    split: str

    def __len__(self) -> int:
        return len(self.starts)

    def inputs(self) -> np.ndarray:
        """(N, rows, n_t) stack of input windows."""
        return np.stack([self.matrix[:, s : s + self.lookback] for s in self.starts])

    def targets(self) -> np.ndarray:
        """(N, rows) stack of next-column targets."""
        if self.split == "test":
            raise ConfigError("test split target is the full remainder; use remainder()")
        return np.stack([self.matrix[:, s + self.lookback] for s in self.starts])

    def remainder(self) -> np.ndarray:
        """(rows, T - n_t) tail of the matrix targeted by the test window."""
        return self.matrix[:, self.lookback :]

    @property
    def samples(self):
        if self.split == "test":
            return [(self.matrix[:, : self.lookback], self.remainder())]
        return [
            (self.matrix[:, s : s + self.lookback], self.matrix[:, s + self.lookback])
            for s in self.starts
        ]


def make_windows(matrix: np.ndarray, lookback: int, n_train: int) -> tuple[WindowedDataset, WindowedDataset, WindowedDataset]:
    """Chronological train/validation windows plus the single test window.

    Training uses the first ``n_train`` windows, validation every later
    one; the test input is the first ``lookback`` columns and its target
    all remaining columns.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    t_total = matrix.shape[1]
    if lookback >= t_total:
        raise ConfigError(f"lookback {lookback} must be smaller than T={t_total}")
    n_windows = t_total - lookback
    if not (0 < n_train < n_windows):
        raise ConfigError(
            f"n_train={n_train} must lie in (0, {n_windows}) for T={t_total}, n_t={lookback}"
        )
    starts = np.arange(n_windows)
    train = WindowedDataset(matrix, starts[:n_train], lookback, "train")
    val = WindowedDataset(matrix, starts[n_train:], lookback, "validation")
    test = WindowedDataset(matrix, starts[:1], lookback, "test")
    return train, val, test


def ae_split(t_steps: int, n_train: int, n_val: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random split of column indices for autoencoder training."""
    if n_train + n_val > t_steps:
        raise ConfigError(f"AE split {n_train}+{n_val} exceeds {t_steps} columns")
    perm = np.random.default_rng(seed).permutation(t_steps)
    return np.sort(perm[:n_train]), np.sort(perm[n_train : n_train + n_val])
