"""End-to-end CLI pipeline on a miniature problem, plus exit codes."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from romf.cli import main
from romf.config import RunConfig
from romf.storage import read_matrix


def tiny_config(out_dir, epochs_ae=12, epochs_fc=12):
    return {
        "problem": {"kind": "burgers", "re": 300.0, "n_s": 64, "t_steps": 60},
        "split": {"n_train": 30, "ae_train": 45, "ae_val": 15, "ae_seed": 3},
        "autoencoder": {
            "kind": "cae",
            "stages": [[4, 2], [8, 2]],
            "kernel_size": 5,
            "activation": "swish",
            "epochs": epochs_ae,
            "batch_size": 16,
            "lr": 1e-3,
            "seed": 11,
        },
        "forecaster": {
            "kind": "cnn",
            "lookback": 5,
            "channels": [6, 6],
            "kernel_size": 3,
            "epochs": epochs_fc,
            "batch_size": 10,
            "lr": 1e-3,
            "seed": 7,
        },
        "ensemble": {
            "members": 2,
            "base_seed": 100,
            "ut_kappa": 0.2,
            "epochs": 6,
            "batch_size": 10,
            "lr": 1e-3,
        },
        "export": {"snapshot_steps": [40, 50]},
        "output_dir": str(out_dir),
    }


def write_config(tmp_path, cfg):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def run(cmd, cfg_path, *extra):
    return main([cmd, "--config", cfg_path, *extra])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, capsys_disabled=None):
    """Full command chain once; individual tests assert on the artifacts."""
    tmp_path = tmp_path_factory.mktemp("cli")
    out = tmp_path / "run"
    cfg_path = write_config(tmp_path, tiny_config(out))
    for cmd in (
        "generate",
        "train-ae",
        "train-forecaster",
        "train-ensemble",
        "rollout",
        "uq-rollout",
        "evaluate",
        "export",
    ):
        assert run(cmd, cfg_path) == 0, f"{cmd} failed"
    return out, cfg_path


class TestPipeline:
    def test_dataset_written(self, pipeline):
        out, _ = pipeline
        m = read_matrix(out / "dataset.romf")
        assert m.shape == (64, 60)

    def test_checkpoints_written(self, pipeline):
        out, _ = pipeline
        assert (out / "ae.ckpt").exists()
        assert (out / "forecaster.ckpt").exists()
        manifest = json.loads((out / "ensemble" / "manifest.json").read_text())
        assert manifest["members"] == 2
        assert len(manifest["files"]) == 2

    def test_rollout_artifacts(self, pipeline):
        out, _ = pipeline
        pred = read_matrix(out / "rollout" / "pred_full.romf")
        assert pred.shape == (64, 55)  # T - lookback
        summary = json.loads((out / "rollout" / "summary.json").read_text())
        assert summary["steps"] == 55
        assert 0 <= summary["final_relative_l2"]

    def test_uq_artifacts(self, pipeline):
        out, _ = pipeline
        mean = read_matrix(out / "uq" / "mean.romf")
        var = read_matrix(out / "uq" / "variance.romf")
        assert mean.shape == var.shape == (64, 55)
        assert np.all(var >= 0.0)
        assert (out / "uq" / "bands.csv").exists()
        assert (out / "uq" / "band_step_40.png").exists()

    def test_evaluate_metrics(self, pipeline):
        out, _ = pipeline
        metrics = json.loads((out / "eval" / "metrics.json").read_text())
        assert set(metrics) >= {"mse", "mae", "relative_l2", "final_step_relative_l2"}

    def test_export_files(self, pipeline):
        out, _ = pipeline
        export = out / "export"
        for stem in ("heatmap_truth", "heatmap_prediction", "heatmap_abs_error", "error_curve"):
            assert (export / f"{stem}.svg").exists() or (export / f"{stem}.csv").exists()
            assert (export / f"{stem}.png").exists()
        assert (export / "profile_step_40.svg").exists()
        assert (export / "profile_step_40.png").exists()

    def test_generate_idempotent(self, pipeline):
        out, cfg_path = pipeline
        digest = hashlib.sha256((out / "dataset.romf").read_bytes()).hexdigest()
        assert run("generate", cfg_path) == 0
        assert hashlib.sha256((out / "dataset.romf").read_bytes()).hexdigest() == digest

    def test_evaluate_perfect_prediction_is_zero(self, pipeline, tmp_path):
        out, cfg_path = pipeline
        truth_tail = read_matrix(out / "dataset.romf")[:, 5:]
        from romf.storage import write_matrix

        pred_path = tmp_path / "perfect.romf"
        write_matrix(pred_path, truth_tail)
        assert run("evaluate", cfg_path, "--pred", str(pred_path)) == 0
        metrics = json.loads((out / "eval" / "metrics.json").read_text())
        assert metrics["relative_l2"] == 0.0


class TestExitCodes:
    def test_invalid_config_exits_2(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path / "x")
        cfg["problem"] = {"kind": "stoker", "h_up": 0.5, "h_ds": 1.0}
        code = run("generate", write_config(tmp_path, cfg))
        assert code == 2
        assert "h_up" in capsys.readouterr().err

    def test_missing_dataset_exits_3(self, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config(tmp_path / "empty"))
        assert run("train-ae", cfg_path) == 3

    def test_mismatched_prediction_exits_4(self, tmp_path):
        out = tmp_path / "run"
        cfg_path = write_config(tmp_path, tiny_config(out, epochs_ae=1, epochs_fc=1))
        assert run("generate", cfg_path) == 0
        from romf.storage import write_matrix

        bad = tmp_path / "bad.romf"
        write_matrix(bad, np.zeros((3, 3)))
        assert run("evaluate", cfg_path, "--pred", str(bad)) == 4

    def test_unreadable_config_exits_2(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["generate", "--config", str(path)]) == 2

    def test_missing_config_file_exits_2(self, tmp_path):
        assert main(["generate", "--config", str(tmp_path / "absent.json")]) == 2


class TestConfigRoundTrip:
    def test_parse_serialize_parse_identity(self, tmp_path):
        raw = tiny_config(tmp_path / "o")
        cfg = RunConfig.from_dict(raw)
        again = RunConfig.from_dict(cfg.to_json())
        assert again.to_json() == raw

    def test_seed_override_changes_all_components(self, tmp_path):
        cfg = RunConfig.from_dict(tiny_config(tmp_path / "o"))
        cfg.override_seed(42)
        assert cfg.raw["autoencoder"]["seed"] == 42
        assert cfg.raw["forecaster"]["seed"] == 43
        assert cfg.raw["ensemble"]["base_seed"] == 44
        assert cfg.raw["split"]["ae_seed"] == 45

    def test_latent_dim_derived(self, tmp_path):
        cfg = RunConfig.from_dict(tiny_config(tmp_path / "o"))
        assert cfg.latent_dim == 16


def test_determinism_across_runs(tmp_path):
    """Same config + seeds twice: byte-identical checkpoints and outputs."""
    digests = []
    for tag in ("a", "b"):
        out = tmp_path / f"run_{tag}"
        cfg_path = tmp_path / f"config_{tag}.json"
        cfg_path.write_text(json.dumps(tiny_config(out, epochs_ae=6, epochs_fc=6)))
        for cmd in ("generate", "train-ae", "train-forecaster", "rollout"):
            assert main([cmd, "--config", str(cfg_path)]) == 0
        files = sorted(
            p.relative_to(out)
            for p in out.rglob("*")
            if p.is_file() and p.suffix in (".romf", ".ckpt", ".csv", ".json")
        )
        digest = {
            str(f): hashlib.sha256((out / f).read_bytes()).hexdigest() for f in files
        }
        digests.append(digest)
    assert digests[0] == digests[1]
