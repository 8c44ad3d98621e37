"""Forecaster architecture probes: causality, locality, recurrence."""

import numpy as np
import pytest

from romf.datasets import make_windows
from romf.errors import ShapeError
from romf.forecast import (
    CnnForecasterSpec,
    LstmForecasterSpec,
    RolloutResult,
    TcnSpec,
    autoregressive_rollout,
    build_forecaster,
    load_forecaster,
    train_forecaster,
)
from romf.nncore import lstm_cell_step


class TestLstmForecaster:
    def test_zero_weights_output_is_head_bias(self):
        model = build_forecaster(LstmForecasterSpec(latent=4, lookback=3), seed=0)
        model.store.params[:] = 0.0
        bias = np.array([0.5, -1.0, 2.0, 0.0])
        model.head.b.data[:] = bias
        out = model.predict_window(np.random.default_rng(0).random((4, 3)))
        assert np.allclose(out, bias)

    def test_single_step_window_equals_cell_plus_head(self):
        model = build_forecaster(LstmForecasterSpec(latent=3, lookback=1), seed=4)
        x = np.random.default_rng(1).random(3)
        h, _ = lstm_cell_step(x, np.zeros(3), np.zeros(3), model.cells[0])
        expected = h @ model.head.w.data + model.head.b.data
        assert np.allclose(model.predict_window(x[:, None]), expected, atol=1e-14)

    def test_order_sensitivity(self):
        model = build_forecaster(LstmForecasterSpec(latent=5, lookback=4), seed=2)
        w = np.random.default_rng(3).random((5, 4))
        assert not np.allclose(model.predict_window(w), model.predict_window(w[:, ::-1]))

    def test_stacked_layers_change_output(self):
        w = np.random.default_rng(4).random((3, 4))
        one = build_forecaster(LstmForecasterSpec(latent=3, lookback=4, layers=1), seed=5)
        two = build_forecaster(LstmForecasterSpec(latent=3, lookback=4, layers=2), seed=5)
        assert one.store.size < two.store.size
        assert two.predict_window(w).shape == (3,)

    def test_shape_mismatch(self):
        model = build_forecaster(LstmForecasterSpec(latent=3, lookback=4), seed=0)
        with pytest.raises(ShapeError):
            model.predict_window(np.zeros((3, 5)))


def _tcn_block_trace(model, window):
    """Per-block activations for a (m, n_t) window on the temporal axis."""
    from romf.nncore import autodiff as ad

    h = ad.as_var(window[None])
    traces = []
    for block in model.blocks:
        h = block(h)
        traces.append(h.data[0])
    return traces


class TestTcnForecaster:
    def test_temporal_causality_exact(self):
        rng = np.random.default_rng(0)
        for draw in range(5):
            model = build_forecaster(
                TcnSpec(latent=4, lookback=8, channels=(5, 5), kernel_size=3), seed=draw
            )
            w = rng.random((4, 8))
            base = _tcn_block_trace(model, w)
            for j in range(8):
                w2 = w.copy()
                w2[:, j:] = 0.0  # zero out j and the future
                mod = _tcn_block_trace(model, w2)
                for t_base, t_mod in zip(base, mod):
                    assert np.array_equal(t_mod[:, :j], t_base[:, :j])

    def test_identity_kernel_block_doubles_input(self):
        # 1-channel block, causal k=3: direction taps (0,0,1) read the
        # current position; with unit gains and unit skip the residual
        # sum is exactly 2x for positive inputs.
        model = build_forecaster(
            TcnSpec(latent=1, lookback=6, channels=(1,), kernel_size=3), seed=0
        )
        block = model.blocks[0]
        for conv in (block.conv1, block.conv2):
            conv.v.data[:] = np.array([[[0.0, 0.0, 1.0]]])
            conv.g.data[:] = 1.0
            conv.b.data[:] = 0.0
        block.skip.w.data[:] = np.array([[[1.0]]])
        block.skip.b.data[:] = 0.0
        x = np.array([[0.3, 1.0, 2.0, 0.5, 0.1, 0.9]])
        out = _tcn_block_trace(model, x)[0]
        assert np.allclose(out, 2.0 * x, atol=1e-12)

    def test_receptive_field_formula(self):
        # 3 blocks, two k-tap convs each, dilations 1,2,4: the last output
        # position depends on exactly 1 + 2*(k-1)*(1+2+4) past steps.
        k = 3
        expected = 1 + 2 * (k - 1) * (1 + 2 + 4)
        model = build_forecaster(
            TcnSpec(latent=1, lookback=40, channels=(3, 3, 3), kernel_size=k), seed=1
        )
        w = np.random.default_rng(2).random((1, 40))
        base = _tcn_block_trace(model, w)[-1][:, -1]
        affected = []
        for j in range(40):
            w2 = w.copy()
            w2[0, j] += 1.0
            mod = _tcn_block_trace(model, w2)[-1][:, -1]
            affected.append(not np.array_equal(mod, base))
        assert sum(affected) == expected
        assert all(affected[-expected:])

    def test_spatial_axis_output_shape(self):
        model = build_forecaster(
            TcnSpec(latent=12, lookback=5, axis="spatial", channels=(6, 6), kernel_size=3),
            seed=3,
        )
        out = model.predict_window(np.random.default_rng(4).random((12, 5)))
        assert out.shape == (12,)

    def test_dual_head_width(self):
        for axis in ("temporal", "spatial"):
            model = build_forecaster(
                TcnSpec(latent=6, lookback=4, axis=axis, channels=(4,), dual=True), seed=0
            )
            assert model.predict_window(np.zeros((6, 4))).shape == (12,)


class TestCnnForecaster:
    def test_output_length_over_table_grid(self):
        for channels in ((50, 50), (100, 100), (200, 200)):
            for k in (3, 5, 7, 9):
                model = build_forecaster(
                    CnnForecasterSpec(latent=12, lookback=5, channels=channels, kernel_size=k),
                    seed=0,
                )
                out = model.predict_window(np.random.default_rng(1).random((12, 5)))
                assert out.shape == (12,)

    def test_zero_input_no_bias_gives_zero(self):
        model = build_forecaster(
            CnnForecasterSpec(latent=8, lookback=4, channels=(6, 6), bias=False), seed=2
        )
        assert np.allclose(model.predict_window(np.zeros((8, 4))), 0.0)

    def test_translation_equivariance_in_interior(self):
        spec = CnnForecasterSpec(latent=30, lookback=4, channels=(8, 8), kernel_size=3)
        model = build_forecaster(spec, seed=3)
        rng = np.random.default_rng(5)
        w = rng.random((30, 4))
        shifted = np.roll(w, 1, axis=0)
        out, out_shifted = model.predict_window(w), model.predict_window(shifted)
        radius = len(spec.channels) * (spec.kernel_size - 1) // 2
        interior = slice(radius + 1, 30 - radius - 1)
        assert np.allclose(np.roll(out, 1)[interior], out_shifted[interior], atol=1e-12)

    def test_perturbation_locality_radius(self):
        spec = CnnForecasterSpec(latent=24, lookback=5, channels=(7, 7), kernel_size=3)
        radius = len(spec.channels) * (spec.kernel_size - 1) // 2
        model = build_forecaster(spec, seed=4)
        w = np.random.default_rng(6).random((24, 5))
        base = model.predict_window(w)
        for node in (5, 12, 18):
            w2 = w.copy()
            w2[node, :] += 0.5
            delta = model.predict_window(w2) - base
            outside = np.ones(24, dtype=bool)
            outside[max(0, node - radius) : node + radius + 1] = False
            assert np.all(delta[outside] == 0.0)
            assert np.any(delta[~outside] != 0.0)


class _LastColumnStub:
    """Minimal forecaster double: predicts the last window column."""

    def predict_window(self, window):
        return window[:, -1]


class TestRollout:
    def test_stub_fixed_point(self):
        seed_window = np.random.default_rng(0).random((4, 3))
        result = autoregressive_rollout(_LastColumnStub(), seed_window, steps=10)
        assert result.latent.shape == (4, 10)
        assert np.allclose(result.latent, seed_window[:, -1][:, None])

    def test_rollout_length(self):
        result = autoregressive_rollout(_LastColumnStub(), np.ones((2, 5)), steps=240)
        assert result.steps == 240

    def test_nonfinite_truncates_and_flags(self):
        class Exploder:
            def __init__(self):
                self.calls = 0

            def predict_window(self, window):
                self.calls += 1
                if self.calls >= 4:
                    return np.full(window.shape[0], np.nan)
                return window[:, -1]

        result = autoregressive_rollout(Exploder(), np.ones((2, 3)), steps=10)
        assert result.truncated_at == 3
        assert result.latent.shape == (2, 3)

    def test_rollout_determinism(self):
        model = build_forecaster(CnnForecasterSpec(latent=8, lookback=3, channels=(4,)), seed=1)
        w = np.random.default_rng(1).random((8, 3))
        a = autoregressive_rollout(model, w, steps=20)
        b = autoregressive_rollout(model, w, steps=20)
        assert np.array_equal(a.latent, b.latent)


class TestTraining:
    def make_windows(self):
        rng = np.random.default_rng(7)
        z = rng.random((6, 40))
        return make_windows(z, lookback=5, n_train=20)

    def test_training_reduces_loss_and_checkpoints(self, tmp_path):
        train_w, val_w, _ = self.make_windows()
        spec = CnnForecasterSpec(latent=6, lookback=5, channels=(4,), kernel_size=3)
        trained = train_forecaster(
            train_w, val_w, spec, epochs=20, batch_size=8, lr=1e-3, seed=3
        )
        assert trained.history.train_loss[-1] < trained.history.train_loss[0]
        path = tmp_path / "fc.ckpt"
        trained.save(path)
        loaded = load_forecaster(path, expect_spec=spec.to_json())
        w = np.random.default_rng(8).random((6, 5))
        assert np.array_equal(loaded.model.predict_window(w), trained.model.predict_window(w))

    def test_same_seed_identical_checkpoints(self):
        train_w, val_w, _ = self.make_windows()
        spec = LstmForecasterSpec(latent=6, lookback=5)
        kw = dict(epochs=5, batch_size=8, lr=1e-3, seed=11)
        a = train_forecaster(train_w, val_w, spec, **kw)
        b = train_forecaster(train_w, val_w, spec, **kw)
        assert np.array_equal(a.model.store.params, b.model.store.params)
