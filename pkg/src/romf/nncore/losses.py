"""Training losses returning autodiff scalars."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import autodiff as ad
from .autodiff import Var


def mse_loss(pred, target) -> Var:
    """Mean squared difference over all elements.

    The gradient w.r.t. pred is 2*(pred-target)/N, which backward
    produces automatically.
    """
    pred = ad.as_var(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes disagree: {pred.shape} vs {target.shape}")
    return ad.vmean(ad.square(ad.sub(pred, target)))


def mse_value_and_grad(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss value plus its gradient as plain arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes disagree: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size
