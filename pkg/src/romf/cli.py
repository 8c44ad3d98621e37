"""Command-line pipeline: generate, train, roll out, evaluate, export.

Every command is driven by one JSON config (see config.RunConfig) and
writes its artifacts under the config's output directory. Exit codes:
0 success, 2 bad config, 3 missing upstream artifact, 4 mismatched
data, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .autoencoder import load_autoencoder, train_autoencoder
from .config import RunConfig
from .datasets import SnapshotMatrix, Scaler, generate_snapshots, make_windows
from .errors import (
    ConfigError,
    DataMismatchError,
    MetricError,
    MissingArtifactError,
    NumericError,
    ShapeError,
    StateError,
)
from .evalmetrics import MetricReport, export_heatmap, export_lineplot, write_csv_matrix
from .forecast import autoregressive_rollout, load_forecaster, train_forecaster
from .storage import read_matrix, read_meta, write_json, write_matrix
from .training import TrainHistory
from .uq import DeepEnsemble, EnsembleSpec, ensemble_train, load_ensemble, uq_rollout

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_MISMATCH = 4
EXIT_NUMERIC = 5


def _dataset_paths(out: Path) -> Path:
    return out / "dataset.romf"


def _load_dataset(cfg: RunConfig) -> SnapshotMatrix:
    path = _dataset_paths(cfg.output_dir)
    if not path.exists():
        raise MissingArtifactError(f"{path} (run `romf generate` first)")
    values = read_matrix(path)
    meta = read_meta(path)
    return SnapshotMatrix(
        values=values,
        x=np.asarray(meta["x"]),
        times=np.asarray(meta["times"]),
        scaler=Scaler(meta["scaler"]["lo"], meta["scaler"]["hi"]),
        problem=meta["problem"],
        config=meta["config"],
    )


def _epoch_logger(stream):
    print("epoch,train_loss,val_loss", file=stream, flush=True)

    def log(epoch, train_loss, val_loss):
        print(f"{epoch},{train_loss:.10e},{val_loss:.10e}", file=stream)

    return log


def cmd_generate(cfg: RunConfig, args) -> int:
    snap = generate_snapshots(cfg.problem_config())
    out = cfg.output_dir
    write_matrix(
        _dataset_paths(out),
        snap.values,
        meta={
            "problem": snap.problem,
            "config": snap.config,
            "x": snap.x.tolist(),
            "times": snap.times.tolist(),
            "scaler": {"lo": snap.scaler.lo, "hi": snap.scaler.hi},
        },
    )
    print(f"wrote {snap.values.shape[0]}x{snap.values.shape[1]} matrix to {_dataset_paths(out)}")
    return EXIT_OK


def cmd_train_ae(cfg: RunConfig, args) -> int:
    snap = _load_dataset(cfg)
    params = cfg.training_params("autoencoder")
    split = cfg.split
    seed = int(cfg.raw["autoencoder"].get("seed", 0))
    trained = train_autoencoder(
        snap,
        cfg.ae_spec(),
        epochs=params["epochs"],
        batch_size=params["batch_size"],
        lr=params["lr"],
        seed=seed,
        n_train=split["ae_train"],
        n_val=split["ae_val"],
        split_seed=split["ae_seed"],
        log_fn=_epoch_logger(sys.stdout),
    )
    out = cfg.output_dir
    trained.save(out / "ae.ckpt")
    write_json(out / "ae_history.json", trained.history.to_json())
    print(
        f"autoencoder m={trained.latent_dim} best epoch {trained.history.best_epoch} "
        f"val relative L2 {trained.validation_relative_l2:.4%}"
    )
    return EXIT_OK


def _latent_windows(cfg: RunConfig, snap: SnapshotMatrix, ae):
    latents = ae.encode_matrix(snap.scaled())
    return latents, make_windows(latents, cfg.lookback, cfg.split["n_train"])


def cmd_train_forecaster(cfg: RunConfig, args) -> int:
    snap = _load_dataset(cfg)
    ae = load_autoencoder(cfg.output_dir / "ae.ckpt", expect_spec=cfg.ae_spec().to_json())
    _, (train_w, val_w, _) = _latent_windows(cfg, snap, ae)
    params = cfg.training_params("forecaster")
    seed = int(cfg.raw["forecaster"].get("seed", 0))
    trained = train_forecaster(
        train_w,
        val_w,
        cfg.forecaster_spec(),
        epochs=params["epochs"],
        batch_size=params["batch_size"],
        lr=params["lr"],
        seed=seed,
        log_fn=_epoch_logger(sys.stdout),
    )
    out = cfg.output_dir
    trained.save(out / "forecaster.ckpt")
    write_json(out / "forecaster_history.json", trained.history.to_json())
    print(
        f"forecaster {cfg.raw['forecaster']['kind']} best epoch "
        f"{trained.history.best_epoch} val loss {trained.history.best_val_loss:.3e}"
    )
    return EXIT_OK


def cmd_train_ensemble(cfg: RunConfig, args) -> int:
    snap = _load_dataset(cfg)
    ae = load_autoencoder(cfg.output_dir / "ae.ckpt", expect_spec=cfg.ae_spec().to_json())
    _, (train_w, val_w, _) = _latent_windows(cfg, snap, ae)
    spec = cfg.ensemble_spec()
    params = cfg.training_params("ensemble")
    jobs = _resolve_jobs(args)
    ensemble = _train_ensemble_jobs(train_w, val_w, spec, params, jobs)
    ensemble.save(cfg.output_dir / "ensemble")
    print(f"trained {spec.members} ensemble members (jobs={jobs})")
    return EXIT_OK


def _resolve_jobs(args) -> int:
    jobs = getattr(args, "jobs", 1) or 1
    cap = os.environ.get("ROMF_THREADS")
    if cap:
        jobs = min(jobs, max(1, int(cap)))
    return jobs


def _train_ensemble_jobs(train_w, val_w, spec: EnsembleSpec, params: dict, jobs: int) -> DeepEnsemble:
    """Members are independent; threads keep results bit-identical to a
    serial run (the BLAS environment is shared either way)."""
    if jobs <= 1:
        return ensemble_train(
            train_w, val_w, spec,
            epochs=params["epochs"], batch_size=params["batch_size"], lr=params["lr"],
        )

    def one(i):
        sub = EnsembleSpec(base=spec.base, members=1, base_seed=spec.member_seed(i))
        return ensemble_train(
            train_w, val_w, sub,
            epochs=params["epochs"], batch_size=params["batch_size"], lr=params["lr"],
        ).members[0]

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        members = list(pool.map(one, range(spec.members)))
    return DeepEnsemble(spec=spec, members=members)


def cmd_rollout(cfg: RunConfig, args) -> int:
    snap = _load_dataset(cfg)
    ae = load_autoencoder(cfg.output_dir / "ae.ckpt", expect_spec=cfg.ae_spec().to_json())
    fc_path = cfg.output_dir / "forecaster.ckpt"
    trained = load_forecaster(fc_path, expect_spec=cfg.forecaster_spec().to_json())
    latents = ae.encode_matrix(snap.scaled())
    n_t = cfg.lookback
    steps = snap.t_steps - n_t
    truth = snap.values[:, n_t:]
    result = autoregressive_rollout(
        trained.model, latents[:, :n_t], steps, decoder=ae, truth=truth
    )
    out = cfg.output_dir / "rollout"
    write_matrix(out / "pred_latent.romf", result.latent)
    write_matrix(out / "pred_full.romf", result.expanded)
    write_csv_matrix(
        out / "error_curve.csv",
        np.column_stack([np.arange(n_t + 1, n_t + result.steps + 1), result.relative_error]),
        header=["step", "relative_l2"],
    )
    summary = {
        "steps": result.steps,
        "final_relative_l2": float(result.relative_error[-1]),
        "max_relative_l2": float(result.relative_error.max()),
        "truncated_at": result.truncated_at,
        "lookback": n_t,
    }
    write_json(out / "summary.json", summary)
    print(
        f"rollout {result.steps} steps; final relative L2 "
        f"{summary['final_relative_l2']:.4%} (max {summary['max_relative_l2']:.4%})"
    )
    return EXIT_OK if result.truncated_at is None else EXIT_NUMERIC


def cmd_uq_rollout(cfg: RunConfig, args) -> int:
    from .plots import band_png

    snap = _load_dataset(cfg)
    ae = load_autoencoder(cfg.output_dir / "ae.ckpt", expect_spec=cfg.ae_spec().to_json())
    ens_dir = cfg.output_dir / "ensemble"
    ensemble = load_ensemble(ens_dir)
    latents = ae.encode_matrix(snap.scaled())
    n_t = cfg.lookback
    steps = snap.t_steps - n_t
    result = uq_rollout(
        ensemble,
        latents[:, :n_t],
        steps,
        ae,
        kappa=cfg.ut_kappa,
        feedback=cfg.ensemble_feedback,
    )
    truth = snap.values[:, n_t:]
    out = cfg.output_dir / "uq"
    write_matrix(out / "mean.romf", result.field_mean)
    write_matrix(out / "variance.romf", result.field_variance)
    write_matrix(out / "truth.romf", truth)
    rel = np.linalg.norm(truth - result.field_mean, axis=0) / np.linalg.norm(truth, axis=0)
    std = np.sqrt(result.field_variance)
    inside = np.mean(np.abs(truth - result.field_mean) <= 2.0 * std, axis=0)
    write_csv_matrix(
        out / "bands.csv",
        np.column_stack(
            [
                np.arange(n_t + 1, n_t + steps + 1),
                rel,
                std.mean(axis=0),
                std.max(axis=0),
                inside,
            ]
        ),
        header=["step", "relative_l2", "mean_std", "max_std", "coverage_2std"],
    )
    avg_var = result.field_variance.mean(axis=1)
    summary = {
        "steps": steps,
        "members": ensemble.spec.members,
        "dropped_members": result.dropped_members,
        "final_relative_l2": float(rel[-1]),
        "max_relative_l2": float(rel.max()),
        "variance_argmax_node": int(np.argmax(avg_var)),
        "n_s": snap.n_s,
    }
    write_json(out / "summary.json", summary)
    for step in cfg.snapshot_steps():
        j = step - n_t - 1
        band_png(
            snap.x,
            result.field_mean[:, j],
            std[:, j],
            out / f"band_step_{step}.png",
            truth=truth[:, j],
            title=f"{snap.problem} step {step} (±2σ)",
        )
    print(
        f"uq rollout {steps} steps; ensemble-mean final relative L2 {rel[-1]:.4%}; "
        f"variance argmax at node {summary['variance_argmax_node']}/{snap.n_s}"
    )
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    snap = _load_dataset(cfg)
    pred_path = Path(args.pred) if args.pred else cfg.output_dir / "rollout" / "pred_full.romf"
    if not pred_path.exists():
        raise MissingArtifactError(f"{pred_path} (run `romf rollout` first)")
    pred = read_matrix(pred_path)
    truth = read_matrix(Path(args.truth)) if args.truth else snap.values[:, cfg.lookback :]
    if truth.shape != pred.shape:
        raise DataMismatchError(
            f"prediction {pred.shape} does not align with truth {truth.shape}"
        )
    report = MetricReport.compute(truth, pred, config_echo={"problem": snap.problem})
    out = cfg.output_dir / "eval"
    write_json(out / "metrics.json", report.to_json())
    write_csv_matrix(
        out / "per_step.csv",
        np.column_stack(
            [np.arange(report.per_step_relative_l2.size), report.per_step_relative_l2]
        ),
        header=["step_offset", "relative_l2"],
    )
    print(
        f"mse {report.mse:.6e}  mae {report.mae:.6e}  relative L2 {report.relative_l2:.4%} "
        f"(final step {report.final_step_relative_l2:.4%})"
    )
    return EXIT_OK


def cmd_export(cfg: RunConfig, args) -> int:
    from .plots import error_curve_png, heatmap_png, profiles_png

    snap = _load_dataset(cfg)
    out = cfg.output_dir / "export"
    n_t = cfg.lookback
    truth_tail = snap.values[:, n_t:]
    export_heatmap(snap.values, out / "heatmap_truth", title="ground truth")
    heatmap_png(snap.values, out / "heatmap_truth.png", title=f"{snap.problem} ground truth")
    pred_path = cfg.output_dir / "rollout" / "pred_full.romf"
    if pred_path.exists():
        pred = read_matrix(pred_path)
        if pred.shape != truth_tail.shape:
            raise DataMismatchError(
                f"prediction {pred.shape} does not align with truth tail {truth_tail.shape}"
            )
        export_heatmap(pred, out / "heatmap_prediction", title="prediction")
        heatmap_png(pred, out / "heatmap_prediction.png", title=f"{snap.problem} prediction")
        export_heatmap(np.abs(truth_tail - pred), out / "heatmap_abs_error", title="absolute error")
        heatmap_png(
            np.abs(truth_tail - pred), out / "heatmap_abs_error.png",
            title=f"{snap.problem} absolute error",
        )
        curve = np.linalg.norm(truth_tail - pred, axis=0) / np.linalg.norm(truth_tail, axis=0)
        export_lineplot(
            {"relative_l2": curve},
            out / "error_curve",
            title="per-step relative L2",
            x=np.arange(n_t + 1, n_t + 1 + curve.size),
        )
        error_curve_png(
            curve, out / "error_curve.png",
            title=f"{snap.problem} per-step relative L2",
            start_step=n_t + 1,
            train_end=cfg.split["n_train"] + n_t,
        )
        for step in cfg.snapshot_steps():
            j = step - n_t - 1
            series = {"truth": truth_tail[:, j], "prediction": pred[:, j]}
            export_lineplot(series, out / f"profile_step_{step}", title=f"step {step}", x=snap.x)
            profiles_png(
                snap.x, series, out / f"profile_step_{step}.png",
                title=f"{snap.problem} step {step}",
            )
    else:
        for step in cfg.snapshot_steps():
            j = step - 1
            series = {"truth": snap.values[:, j]}
            export_lineplot(series, out / f"profile_step_{step}", title=f"step {step}", x=snap.x)
            profiles_png(
                snap.x, series, out / f"profile_step_{step}.png",
                title=f"{snap.problem} step {step}",
            )
    print(f"exports written to {out}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train-ae": cmd_train_ae,
    "train-forecaster": cmd_train_forecaster,
    "train-ensemble": cmd_train_ensemble,
    "rollout": cmd_rollout,
    "uq-rollout": cmd_uq_rollout,
    "evaluate": cmd_evaluate,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="romf",
        description="Latent-space forecasting of PDE snapshots with uncertainty bands.",
    )
    parser.add_argument("--version", action="version", version=f"romf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override every component seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel jobs for ensembles")
        p.add_argument("--out", default=None, help="override the config output directory")
        if name == "evaluate":
            p.add_argument("--pred", default=None, help="prediction ROMF file")
            p.add_argument("--truth", default=None, help="truth ROMF file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config)
        if args.seed is not None:
            cfg.override_seed(args.seed)
        if args.out:
            cfg.override_output_dir(args.out)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (DataMismatchError, ShapeError, MetricError) as exc:
        print(f"data mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (NumericError, StateError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
