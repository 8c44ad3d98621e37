"""Run configuration: one JSON file drives the whole pipeline.

Validation happens before any compute and reports the offending field
path. Parsing then serializing then parsing again is the identity.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autoencoder import CaeSpec, MlpAeSpec
from .datasets import BurgersConfig, StokerConfig
from .errors import ConfigError
from .forecast import CnnForecasterSpec, LstmForecasterSpec, TcnSpec
from .uq import EnsembleSpec

DEFAULT_SNAPSHOT_STEPS = {"burgers": [180, 200, 220], "stoker": [320, 370, 420]}


def _need(obj: dict, key: str, path: str):
    if key not in obj:
        raise ConfigError(f"{path}.{key}: missing required field")
    return obj[key]


def _positive(value, path: str, kind=float):
    try:
        value = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if value <= 0:
        raise ConfigError(f"{path}: must be positive, got {value}")
    return value


def _choice(value, options, path: str):
    if value not in options:
        raise ConfigError(f"{path}: must be one of {sorted(options)}, got {value!r}")
    return value


@dataclass
class RunConfig:
    """Validated view over the raw config dict."""

    raw: dict

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        cfg = cls(raw=copy.deepcopy(raw))
        cfg.validate()
        return cfg

    def to_json(self) -> dict:
        return copy.deepcopy(self.raw)

    # ---- sections ----------------------------------------------------
    @property
    def problem_kind(self) -> str:
        return self.raw["problem"]["kind"]

    def problem_config(self):
        p = self.raw["problem"]
        if p["kind"] == "burgers":
            return BurgersConfig(
                length=float(p.get("length", 1.0)),
                t_max=float(p.get("t_max", 2.0)),
                n_s=int(p.get("n_s", 200)),
                t_steps=int(p.get("t_steps", 250)),
                re=float(p.get("re", 300.0)),
            )
        return StokerConfig(
            length=float(p.get("length", 100.0)),
            x0=float(p.get("x0", 50.0)),
            n_s=int(p.get("n_s", 1000)),
            t_steps=int(p.get("t_steps", 450)),
            t_max=float(p.get("t_max", 3.6)),
            h_up=float(p.get("h_up", 10.0)),
            h_ds=float(p.get("h_ds", 1.0)),
            g=float(p.get("g", 9.81)),
        )

    def ae_spec(self):
        a = self.raw["autoencoder"]
        n_s = int(self.raw["problem"].get("n_s", 200 if self.problem_kind == "burgers" else 1000))
        if a["kind"] == "mlp":
            return MlpAeSpec(
                n_s=n_s,
                latent=int(a["latent"]),
                hidden=tuple(a.get("hidden", (100, 50))),
                activation=a.get("activation", "relu"),
            )
        return CaeSpec(
            n_s=n_s,
            stages=tuple(tuple(st) for st in a.get("stages", ((8, 2), (32, 2)))),
            kernel_size=int(a.get("kernel_size", 5)),
            activation=a.get("activation", "swish"),
        )

    @property
    def latent_dim(self) -> int:
        return self.ae_spec().latent

    def forecaster_spec(self, dual: bool = False):
        f = self.raw["forecaster"]
        m = self.latent_dim
        lookback = int(f["lookback"])
        kind = f["kind"]
        if kind == "lstm":
            return LstmForecasterSpec(
                latent=m, lookback=lookback, layers=int(f.get("layers", 1)), dual=dual
            )
        if kind == "tcn":
            return TcnSpec(
                latent=m,
                lookback=lookback,
                axis=f.get("axis", "temporal"),
                channels=tuple(f.get("channels", (64, 64, 64))),
                kernel_size=int(f.get("kernel_size", 3)),
                dual=dual,
                bias=bool(f.get("bias", True)),
            )
        return CnnForecasterSpec(
            latent=m,
            lookback=lookback,
            channels=tuple(f.get("channels", (50, 50))),
            kernel_size=int(f.get("kernel_size", 3)),
            dual=dual,
            bias=bool(f.get("bias", True)),
        )

    def ensemble_spec(self) -> EnsembleSpec:
        e = self.raw.get("ensemble", {})
        return EnsembleSpec(
            base=self.forecaster_spec(dual=True),
            members=int(e.get("members", 10)),
            base_seed=int(e.get("base_seed", 100)),
        )

    def training_params(self, section: str) -> dict:
        s = self.raw[section] if section in self.raw else {}
        return {
            "epochs": int(s.get("epochs", 100)),
            "batch_size": int(s.get("batch_size", 15)),
            "lr": float(s.get("lr", 1e-3)),
        }

    @property
    def split(self) -> dict:
        s = self.raw["split"]
        return {
            "n_train": int(s["n_train"]),
            "ae_train": int(s["ae_train"]),
            "ae_val": int(s["ae_val"]),
            "ae_seed": int(s.get("ae_seed", 0)),
        }

    @property
    def lookback(self) -> int:
        return int(self.raw["forecaster"]["lookback"])

    @property
    def ut_kappa(self) -> float:
        return float(self.raw.get("ensemble", {}).get("ut_kappa", 0.2))

    @property
    def ensemble_feedback(self) -> str:
        return self.raw.get("ensemble", {}).get("feedback", "member")

    @property
    def output_dir(self) -> Path:
        return Path(self.raw.get("output_dir", "runs/out"))

    def snapshot_steps(self) -> list:
        exp = self.raw.get("export", {})
        return [int(s) for s in exp.get("snapshot_steps", DEFAULT_SNAPSHOT_STEPS[self.problem_kind])]

    def override_seed(self, seed: int) -> None:
        """Re-seed every stochastic component from one base seed."""
        self.raw["autoencoder"]["seed"] = int(seed)
        self.raw["forecaster"]["seed"] = int(seed) + 1
        self.raw.setdefault("ensemble", {})["base_seed"] = int(seed) + 2
        self.raw["split"]["ae_seed"] = int(seed) + 3

    def override_output_dir(self, path) -> None:
        self.raw["output_dir"] = str(path)

    # ---- validation ---------------------------------------------------
    def validate(self) -> None:
        raw = self.raw
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        problem = _need(raw, "problem", "config")
        kind = _choice(_need(problem, "kind", "problem"), {"burgers", "stoker"}, "problem.kind")
        if kind == "burgers":
            _positive(problem.get("re", 300.0), "problem.re")
        else:
            h_up = _positive(problem.get("h_up", 10.0), "problem.h_up")
            h_ds = _positive(problem.get("h_ds", 1.0), "problem.h_ds")
            if h_up <= h_ds:
                raise ConfigError(f"problem.h_up: must exceed h_ds ({h_up} <= {h_ds})")
        n_s = _positive(problem.get("n_s", 200 if kind == "burgers" else 1000), "problem.n_s", int)
        t_steps = _positive(
            problem.get("t_steps", 250 if kind == "burgers" else 450), "problem.t_steps", int
        )

        ae = _need(raw, "autoencoder", "config")
        ae_kind = _choice(_need(ae, "kind", "autoencoder"), {"mlp", "cae"}, "autoencoder.kind")
        if ae_kind == "mlp":
            latent = _positive(_need(ae, "latent", "autoencoder"), "autoencoder.latent", int)
            if latent >= n_s:
                raise ConfigError(
                    f"autoencoder.latent: {latent} does not compress below n_s={n_s}"
                )
        else:
            stages = ae.get("stages", [[8, 2], [32, 2]])
            if not stages:
                raise ConfigError("autoencoder.stages: must list at least one (channels, stride)")
            stride_product = int(np.prod([int(s[1]) for s in stages]))
            if n_s % stride_product != 0:
                raise ConfigError(
                    f"autoencoder.stages: pool strides multiply to {stride_product}, "
                    f"which does not divide n_s={n_s}"
                )
            if int(ae.get("kernel_size", 5)) % 2 == 0:
                raise ConfigError("autoencoder.kernel_size: must be odd")
            latent = n_s // stride_product
        for key in ("epochs", "batch_size"):
            _positive(ae.get(key, 1), f"autoencoder.{key}", int)
        _positive(ae.get("lr", 1e-3), "autoencoder.lr")

        fc = _need(raw, "forecaster", "config")
        _choice(_need(fc, "kind", "forecaster"), {"lstm", "tcn", "cnn"}, "forecaster.kind")
        lookback = _positive(_need(fc, "lookback", "forecaster"), "forecaster.lookback", int)
        if lookback >= t_steps:
            raise ConfigError(f"forecaster.lookback: {lookback} must be < t_steps={t_steps}")
        if fc["kind"] == "tcn":
            _choice(fc.get("axis", "temporal"), {"temporal", "spatial"}, "forecaster.axis")
        if fc["kind"] == "cnn" and int(fc.get("kernel_size", 3)) % 2 == 0:
            raise ConfigError("forecaster.kernel_size: must be odd for the CNN")
        for key in ("epochs", "batch_size"):
            _positive(fc.get(key, 1), f"forecaster.{key}", int)
        _positive(fc.get("lr", 1e-3), "forecaster.lr")

        split = _need(raw, "split", "config")
        n_train = _positive(_need(split, "n_train", "split"), "split.n_train", int)
        if n_train >= t_steps - lookback:
            raise ConfigError(
                f"split.n_train: {n_train} leaves no validation windows "
                f"(T={t_steps}, lookback={lookback})"
            )
        ae_train = _positive(_need(split, "ae_train", "split"), "split.ae_train", int)
        ae_val = _positive(_need(split, "ae_val", "split"), "split.ae_val", int)
        if ae_train + ae_val > t_steps:
            raise ConfigError(
                f"split.ae_train: {ae_train}+{ae_val} columns exceed T={t_steps}"
            )

        ens = raw.get("ensemble", {})
        if ens:
            members = _positive(ens.get("members", 10), "ensemble.members", int)
            kappa = float(ens.get("ut_kappa", 0.2))
            if latent + kappa <= 0:
                raise ConfigError(f"ensemble.ut_kappa: m + kappa must be > 0, got {latent}+{kappa}")
            _choice(ens.get("feedback", "member"), {"member", "aggregate"}, "ensemble.feedback")
            for key in ("epochs", "batch_size"):
                if key in ens:
                    _positive(ens[key], f"ensemble.{key}", int)

        for step in raw.get("export", {}).get("snapshot_steps", []):
            step = int(step)
            if not (lookback < step <= t_steps):
                raise ConfigError(
                    f"export.snapshot_steps: step {step} outside predicted range "
                    f"({lookback}, {t_steps}]"
                )
