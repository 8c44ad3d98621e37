"""Mini-batch Adam training with best-validation checkpointing.

One function serves autoencoders and every forecaster: models expose
``run(x, train)`` / ``predict(x)`` from the Network base and the loss is
a callable on (output Var, target array). Validation is evaluated in
eval mode each epoch and the parameters from the best epoch are
restored before returning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .nncore import AdamState, adam_step
from .nncore.losses import mse_loss
from .nncore.network import Network

VAL_CHUNK = 64


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")

    def to_json(self) -> dict:
        return {
            "train_loss": [float(v) for v in self.train_loss],
            "val_loss": [float(v) for v in self.val_loss],
            "best_epoch": self.best_epoch,
            "best_val_loss": float(self.best_val_loss),
        }


def evaluate_loss(model: Network, x: np.ndarray, y: np.ndarray, loss_fn) -> float:
    """Mean loss over ``x`` in eval mode, chunked to bound memory."""
    total, count = 0.0, 0
    for lo in range(0, len(x), VAL_CHUNK):
        xb, yb = x[lo : lo + VAL_CHUNK], y[lo : lo + VAL_CHUNK]
        out = model.forward(xb, train=False)
        total += loss_fn(out, yb).item() * len(xb)
        count += len(xb)
    return total / max(count, 1)


def fit(
    model: Network,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    loss_fn=mse_loss,
    log_fn=None,
    context: str = "",
) -> TrainHistory:
    """Train in shuffled mini-batches; returns per-epoch history.

    Raises NumericError echoing ``context`` and the seed if the loss
    goes non-finite, so a failed run is reproducible from the message.
    """
    rng = np.random.default_rng([seed, 0x5EED])
    adam = AdamState(model.store.size, lr=lr)
    history = TrainHistory()
    best_state = model.store.state_arrays()
    n = len(x_train)
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = perm[lo : lo + batch_size]
            out = model.run(x_train[idx], train=True)
            loss = loss_fn(out, y_train[idx])
            loss.backward()
            model.store.collect_grads()
            adam_step(model.store, adam)
            total += loss.item() * len(idx)
        train_loss = total / n
        if not np.isfinite(train_loss):
            raise NumericError(
                f"training loss diverged at epoch {epoch} (seed={seed}"
                + (f", {context}" if context else "")
                + ")"
            )
        val_loss = evaluate_loss(model, x_val, y_val, loss_fn)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_state = model.store.state_arrays()
        if log_fn is not None:
            log_fn(epoch, train_loss, val_loss)
    model.store.load_state(*best_state)
    model._tape = None
    return history
