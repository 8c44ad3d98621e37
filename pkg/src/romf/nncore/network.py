"""Base class tying layers, a ParamStore and the backward pass together."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, StateError
from .autodiff import Var
from .layers import ParamStore


class Network:
    """A model with a shared ParamStore and a recorded forward output.

    Subclasses implement ``forward`` returning a Var; ``backprop`` seeds
    the reverse pass with a loss gradient and fills the store's flat
    gradient array.
    """

    def __init__(self, store: ParamStore):
        self.store = store
        self._tape: Var | None = None

    def forward(self, x, train: bool = True) -> Var:
        raise NotImplementedError

    def run(self, x, train: bool = True) -> Var:
        self.store.zero_grads()
        out = self.forward(x, train=train)
        self._tape = out
        return out

    def predict(self, x) -> np.ndarray:
        return self.forward(x, train=False).data

    def backprop(self, loss_gradient: np.ndarray) -> np.ndarray:
        """Backward pass from the last recorded forward output."""
        if self._tape is None:
            raise StateError("backprop called without a recorded forward pass")
        out = self._tape
        loss_gradient = np.asarray(loss_gradient, dtype=np.float64)
        if loss_gradient.shape != out.data.shape:
            raise ShapeError(
                f"loss gradient shape {loss_gradient.shape} != output {out.data.shape}"
            )
        out.backward(loss_gradient)
        self._tape = None
        return self.store.collect_grads()

    def parameter_count(self) -> int:
        return self.store.size
