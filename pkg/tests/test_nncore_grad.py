"""Analytic gradients vs central finite differences, plus Adam and the
backprop tape contract."""

import numpy as np
import pytest

from romf.errors import NumericError, StateError
from romf.nncore import AdamState, Dense, ParamStore, adam_step, mse_loss, mse_value_and_grad
from romf.nncore.network import Network

from gradcheck_utils import LAYER_KINDS, run_layer_gradcheck
from helpers import numeric_gradient, rel_err

TOL = 1e-5


@pytest.mark.parametrize("kind", LAYER_KINDS)
def test_layer_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(42)
    for _ in range(3):
        assert run_layer_gradcheck(kind, rng) < TOL


class _OneDense(Network):
    def __init__(self, n_in, n_out, seed=0):
        store = ParamStore(seed)
        self.layer = Dense(store, "d", n_in, n_out)
        store.finalize()
        super().__init__(store)

    def forward(self, x, train=True):
        return self.layer(x)


class TestBackprop:
    def test_dense_mse_matches_closed_form(self):
        rng = np.random.default_rng(0)
        net = _OneDense(3, 2, seed=1)
        x = rng.normal(size=(1, 3))
        y = rng.normal(size=(1, 2))
        out = net.run(x)
        _, gout = mse_value_and_grad(out.data, y)
        grads = net.backprop(gout)
        # d(mean (Wx+b-y)^2)/dW = x^T (2(out-y)/n), d/db = 2(out-y)/n
        resid = 2.0 * (out.data - y) / y.size
        gw = x.T @ resid
        assert np.allclose(grads[: gw.size], gw.ravel(), atol=1e-12)
        assert np.allclose(grads[gw.size :], resid.ravel(), atol=1e-12)

    def test_zero_loss_gradient_gives_zero_param_gradients(self):
        net = _OneDense(4, 3)
        out = net.run(np.ones((2, 4)))
        grads = net.backprop(np.zeros_like(out.data))
        assert np.all(grads == 0.0)

    def test_backward_without_forward_raises(self):
        net = _OneDense(2, 2)
        with pytest.raises(StateError):
            net.backprop(np.zeros((1, 2)))

    def test_mse_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        pred = rng.normal(size=(3, 4))
        target = rng.normal(size=(3, 4))
        _, grad = mse_value_and_grad(pred, target)
        num = numeric_gradient(lambda p: mse_value_and_grad(p, target)[0], pred.copy())
        assert rel_err(grad, num) < TOL

    def test_mse_examples(self):
        assert mse_value_and_grad(np.array([1.0, 2.0]), np.array([1.0, 2.0]))[0] == 0.0
        assert mse_value_and_grad(np.array([0.0, 0.0]), np.array([1.0, 3.0]))[0] == 5.0


class TestAdam:
    def make_store(self, values):
        store = ParamStore(0)
        p = store.add_param("p", np.asarray(values, dtype=np.float64))
        store.finalize()
        return store, p

    def test_zero_gradient_is_bitwise_noop(self):
        store, _ = self.make_store([1.0, -2.0, 3.5])
        before = store.params.copy()
        state = AdamState(store.params.size, lr=0.1)
        for _ in range(5):
            store.grads[:] = 0.0
            adam_step(store, state)
        assert np.array_equal(store.params, before)

    def test_scalar_quadratic_converges_to_zero(self):
        store, p = self.make_store([1.0])
        state = AdamState(1, lr=0.1)
        values = [store.params[0]]
        for _ in range(100):
            store.grads[:] = 2.0 * store.params  # d(theta^2)
            adam_step(store, state)
            values.append(store.params[0])
        # independent scalar simulation of the same recursion
        theta, m, v = 1.0, 0.0, 0.0
        oracle = [theta]
        for t in range(1, 101):
            g = 2.0 * theta
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            oracle.append(theta)
        assert np.allclose(values, oracle, atol=1e-14)
        # early phase descends at ~lr per step; endpoint is near the minimum
        assert np.all(np.diff(values[:11]) < 0.0)
        assert abs(values[-1]) < 0.01

    def test_first_step_magnitude_is_lr_times_sign(self):
        store, _ = self.make_store([0.7, -0.4])
        state = AdamState(2, lr=0.01)
        before = store.params.copy()
        store.grads[:] = [3.0, -0.5]
        adam_step(store, state)
        delta = store.params - before
        assert np.allclose(delta, [-0.01, 0.01], rtol=1e-6)

    def test_nonfinite_gradient_aborts_with_block_name(self):
        store, _ = self.make_store([1.0, 2.0])
        state = AdamState(2, lr=0.1)
        store.grads[:] = [np.nan, 1.0]
        with pytest.raises(NumericError, match="block 0"):
            adam_step(store, state)


def test_forward_deterministic():
    net1 = _OneDense(5, 4, seed=11)
    net2 = _OneDense(5, 4, seed=11)
    x = np.random.default_rng(1).normal(size=(3, 5))
    assert np.array_equal(net1.predict(x), net2.predict(x))
