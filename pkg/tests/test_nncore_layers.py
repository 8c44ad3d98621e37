"""Forward-pass contracts of the layer primitives."""

import numpy as np
import pytest

from romf.errors import ConfigError, ShapeError
from romf.nncore import (
    BatchNorm1D,
    Conv1D,
    Dense,
    LSTMCell,
    ParamStore,
    activation_apply,
    batch_norm_forward,
    conv1d_forward,
    dense_forward,
    lstm_cell_step,
    weight_norm_apply,
)
from romf.nncore import autodiff as ad

from helpers import naive_conv1d


def make_dense(n_in, n_out, seed=0):
    store = ParamStore(seed)
    layer = Dense(store, "d", n_in, n_out)
    store.finalize()
    return layer


def make_conv(c_in, c_out, k, seed=0, **kw):
    store = ParamStore(seed)
    layer = Conv1D(store, "c", c_in, c_out, k, **kw)
    store.finalize()
    return layer


class TestDense:
    def test_identity(self):
        layer = make_dense(2, 2)
        layer.w.data[:] = np.eye(2)
        layer.b.data[:] = 0.0
        assert np.allclose(dense_forward([1.0, 2.0], layer), [1.0, 2.0])

    def test_hand_matrix_multiply(self):
        layer = make_dense(2, 2)
        w = np.array([[1.0, 1.0], [0.0, 1.0]])  # acts as y = W x + b
        layer.w.data[:] = w.T
        layer.b.data[:] = [1.0, 0.0]
        assert np.allclose(dense_forward([2.0, 3.0], layer), [6.0, 3.0])

    def test_wrong_length_raises(self):
        layer = make_dense(3, 2)
        with pytest.raises(ShapeError):
            dense_forward([1.0, 2.0], layer)


class TestConv1D:
    def test_identity_kernel(self):
        layer = make_conv(1, 1, 3, padding="symmetric", bias=False)
        layer.w.data[:] = np.array([[[0.0, 1.0, 0.0]]])
        v = np.array([[1.0, -2.0, 3.0, 0.5]])
        assert np.allclose(conv1d_forward(v, layer), v)

    def test_unpadded_matches_naive_oracle(self):
        layer = make_conv(1, 1, 2, padding="none", bias=False)
        layer.w.data[:] = np.array([[[1.0, 1.0]]])
        out = conv1d_forward(np.array([[1.0, 2.0, 3.0]]), layer)
        assert np.allclose(out[0], [3.0, 5.0])
        assert np.allclose(out[0], naive_conv1d([1.0, 2.0, 3.0], [1.0, 1.0]))

    def test_dilated_matches_naive_oracle(self):
        layer = make_conv(1, 1, 2, dilation=2, padding="none", bias=False)
        layer.w.data[:] = np.array([[[1.0, 1.0]]])
        out = conv1d_forward(np.array([[1.0, 2.0, 3.0, 4.0]]), layer)
        assert np.allclose(out[0], [4.0, 6.0])
        assert np.allclose(out[0], naive_conv1d([1.0, 2.0, 3.0, 4.0], [1.0, 1.0], dilation=2))

    def test_random_multichannel_matches_naive_oracle(self):
        rng = np.random.default_rng(5)
        layer = make_conv(3, 1, 3, padding="none", bias=False)
        layer.w.data[:] = rng.normal(size=(1, 3, 3))
        v = rng.normal(size=(3, 9))
        out = conv1d_forward(v, layer)
        assert np.allclose(out[0], naive_conv1d(v, layer.w.data[0]))

    def test_symmetric_padding_preserves_length(self):
        rng = np.random.default_rng(1)
        for k in (1, 3, 5, 7):
            layer = make_conv(2, 3, k, padding="symmetric")
            out = conv1d_forward(rng.normal(size=(2, 11)), layer)
            assert out.shape == (3, 11)

    def test_causal_no_future_leakage(self):
        rng = np.random.default_rng(2)
        layer = make_conv(1, 1, 3, dilation=2, padding="causal", seed=4)
        v = rng.normal(size=(1, 10))
        base = conv1d_forward(v, layer)
        for s in range(10):
            v2 = v.copy()
            v2[:, s + 1 :] = 0.0
            assert np.array_equal(conv1d_forward(v2, layer)[:, : s + 1], base[:, : s + 1])

    def test_kernel_span_too_large_raises(self):
        layer = make_conv(1, 1, 5, dilation=3, padding="none")
        with pytest.raises(ShapeError):
            conv1d_forward(np.zeros((1, 8)), layer)

    def test_identity_kernel_composes_to_identity(self):
        layer = make_conv(1, 1, 3, padding="symmetric", bias=False)
        layer.w.data[:] = np.array([[[0.0, 1.0, 0.0]]])
        v = np.linspace(-1.0, 1.0, 13)[None]
        out = v
        for _ in range(5):
            out = conv1d_forward(out, layer)
        assert np.allclose(out, v)

    def test_even_kernel_with_symmetric_padding_rejected(self):
        with pytest.raises(ConfigError):
            make_conv(1, 1, 4, padding="symmetric")


class TestLSTMCell:
    def make_cell(self, n_in, hidden, seed=0):
        store = ParamStore(seed)
        cell = LSTMCell(store, "cell", n_in, hidden)
        store.finalize()
        return cell

    def test_zero_weights_zero_fixed_point(self):
        cell = self.make_cell(3, 4)
        cell.wx.data[:] = 0.0
        cell.wh.data[:] = 0.0
        cell.b.data[:] = 0.0
        h, c = lstm_cell_step(np.ones(3), np.zeros(4), np.zeros(4), cell)
        assert np.allclose(h, 0.0) and np.allclose(c, 0.0)

    def test_saturated_forget_gate_preserves_cell(self):
        cell = self.make_cell(2, 3)
        cell.wx.data[:] = 0.0
        cell.wh.data[:] = 0.0
        cell.b.data[:] = 0.0
        cell.b.data[3:6] = 50.0  # forget-gate block
        c_prev = np.array([0.3, -1.2, 2.0])
        _, c = lstm_cell_step(np.ones(2), np.zeros(3), c_prev, cell)
        assert np.allclose(c, c_prev, atol=1e-12)

    def test_matches_gate_by_gate_oracle(self):
        rng = np.random.default_rng(7)
        cell = self.make_cell(3, 4, seed=9)
        x = rng.normal(size=3)
        h_prev = rng.normal(size=4)
        c_prev = rng.normal(size=4)
        h, c = lstm_cell_step(x, h_prev, c_prev, cell)

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        gates = x @ cell.wx.data + h_prev @ cell.wh.data + cell.b.data
        zi, zf, za, zo = (gates[i * 4 : (i + 1) * 4] for i in range(4))
        c_ref = sig(zf) * c_prev + sig(zi) * np.tanh(za)
        h_ref = sig(zo) * np.tanh(c_ref)
        assert np.allclose(c, c_ref, atol=1e-14)
        assert np.allclose(h, h_ref, atol=1e-14)

    def test_width_mismatch_raises(self):
        cell = self.make_cell(3, 4)
        with pytest.raises(ShapeError):
            lstm_cell_step(np.zeros(2), np.zeros(4), np.zeros(4), cell)


class TestActivations:
    def test_softplus_at_zero(self):
        assert activation_apply(np.array([0.0]), "softplus")[0] == pytest.approx(np.log(2.0))

    def test_symmetry_values(self):
        assert activation_apply(np.array([0.0]), "tanh")[0] == 0.0
        assert activation_apply(np.array([0.0]), "sigmoid")[0] == 0.5

    def test_swish_at_one(self):
        # 1 * sigmoid(1), scalar calculator value
        assert activation_apply(np.array([1.0]), "swish")[0] == pytest.approx(
            0.7310585786300049, abs=1e-12
        )

    def test_softplus_overflow_branch(self):
        out = activation_apply(np.array([800.0, 31.0]), "softplus")
        assert np.all(np.isfinite(out))
        assert out[0] == 800.0

    def test_unknown_activation_rejected(self):
        with pytest.raises(ConfigError):
            activation_apply(np.zeros(2), "gelu")


class TestBatchNorm:
    def make_bn(self, channels):
        store = ParamStore(0)
        bn = BatchNorm1D(store, "bn", channels)
        store.finalize()
        return bn

    def test_constant_channel_maps_to_zero(self):
        bn = self.make_bn(1)
        x = np.full((3, 1, 4), 2.5)
        assert np.allclose(batch_norm_forward(x, bn, "train"), 0.0)

    def test_two_sample_normalization(self):
        bn = self.make_bn(1)
        x = np.array([-1.0, 1.0]).reshape(2, 1, 1)
        out = batch_norm_forward(x, bn, "train")
        expected = np.array([-1.0, 1.0]) / np.sqrt(1.0 + 1e-5)
        assert np.allclose(out.ravel(), expected, atol=1e-15)

    def test_eval_with_unit_stats_is_identity(self):
        bn = self.make_bn(2)
        x = np.random.default_rng(0).normal(size=(3, 2, 5))
        out = batch_norm_forward(x, bn, "eval")
        assert np.allclose(out, x, rtol=1e-4)

    def test_single_sample_train_rejected(self):
        bn = self.make_bn(1)
        with pytest.raises(ConfigError):
            batch_norm_forward(np.zeros((1, 1, 4)), bn, "train")

    def test_running_stats_move_toward_batch(self):
        bn = self.make_bn(1)
        x = np.full((4, 1, 2), 3.0)
        x[2:] = 5.0
        batch_norm_forward(x, bn, "train")
        assert bn.run_mean.data[0] == pytest.approx(0.9 * 0.0 + 0.1 * 4.0)


class TestWeightNorm:
    def test_reparameterization_identity(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=(2, 3, 3))
        norms = np.sqrt((v * v).sum(axis=(1, 2)))
        w = weight_norm_apply(v, norms)
        assert np.allclose(w, v, atol=1e-14)

    def test_zero_gain(self):
        v = np.random.default_rng(4).normal(size=(2, 1, 3))
        assert np.allclose(weight_norm_apply(v, np.zeros(2)), 0.0)

    def test_filter_norm_equals_gain(self):
        rng = np.random.default_rng(5)
        v = rng.normal(size=(4, 2, 5))
        g = rng.normal(size=4)
        w = weight_norm_apply(v, g)
        assert np.allclose(np.sqrt((w * w).sum(axis=(1, 2))), np.abs(g))

    def test_zero_direction_floored(self):
        w = weight_norm_apply(np.zeros((1, 1, 3)), np.ones(1))
        assert np.all(np.isfinite(w))


class TestPooling:
    def test_window_average(self):
        out = ad.avg_pool1d(np.array([[[1.0, 3.0, 5.0, 7.0]]]), 2)
        assert np.allclose(out.data, [[[2.0, 6.0]]])

    def test_unit_stride_identity(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 5))
        assert np.allclose(ad.avg_pool1d(x, 1).data, x)
        assert np.allclose(ad.upsample1d(x, 1).data, x)

    def test_upsample_repeats(self):
        out = ad.upsample1d(np.array([[[2.0, 6.0]]]), 2)
        assert np.allclose(out.data, [[[2.0, 2.0, 6.0, 6.0]]])

    def test_trailing_remainder_averaged(self):
        out = ad.avg_pool1d(np.array([[[1.0, 3.0, 5.0, 7.0, 9.0]]]), 2)
        assert np.allclose(out.data, [[[2.0, 6.0, 9.0]]])

    def test_pool_then_upsample_identity_on_constants(self):
        x = np.full((1, 2, 8), 4.2)
        back = ad.upsample1d(ad.avg_pool1d(x, 2), 2)
        assert np.allclose(back.data, x)

    def test_bad_stride_rejected(self):
        with pytest.raises(ShapeError):
            ad.avg_pool1d(np.zeros((1, 1, 4)), 0)
