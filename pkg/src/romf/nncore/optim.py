"""Adam optimizer over a ParamStore's flat arrays."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .layers import ParamStore


class AdamState:
    """First/second moment accumulators plus step counter."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(size, dtype=np.float64)
        self.v = np.zeros(size, dtype=np.float64)
        self.t = 0
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps


def adam_step(store: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update of the whole parameter vector.

    Non-finite gradients abort with the offending parameter block named,
    since that is the only actionable diagnostic at this level.
    """
    g = store.grads
    if not np.all(np.isfinite(g)):
        for i, (name, lo, hi) in enumerate(store.offsets()):
            block = g[lo:hi]
            if not np.all(np.isfinite(block)):
                finite = block[np.isfinite(block)]
                norm = float(np.linalg.norm(finite)) if finite.size else float("nan")
                raise NumericError(
                    f"non-finite gradient in parameter block {i} ({name}); "
                    f"finite-part norm {norm:.3e}"
                )
        raise NumericError("non-finite gradient")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    store.params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
