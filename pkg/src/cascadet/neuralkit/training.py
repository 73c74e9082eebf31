"""Mini-batch training loop with early stopping on validation loss."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from cascadet.neuralkit.layers import Module
from cascadet.neuralkit.optim import AdamW
from cascadet.neuralkit.tensor import Tensor


class TrainingDivergedError(RuntimeError):
    """Raised when a batch loss or gradient goes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    base_lr: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0


@dataclass
class TrainingHistory:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.rows)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for row in self.rows:
                writer.writerow(
                    [
                        row["epoch"],
                        f"{row['train_loss']:.10g}",
                        f"{row['val_loss']:.10g}",
                        f"{row['lr']:.10g}",
                    ]
                )


def train_with_early_stopping(
    model: Module,
    n_train: int,
    batch_loss: Callable[[np.ndarray, np.random.Generator], Tensor],
    val_loss: Callable[[], float],
    config: TrainConfig = TrainConfig(),
) -> TrainingHistory:
    """Run the optimizer until max_epochs or patience exhaustion.

    batch_loss(indices, rng) builds the loss graph for one batch (the rng
    carries any augmentation randomness); val_loss() scores the held-out
    split with the model in eval mode. The model is left holding the best
    parameters seen.
    """
    if n_train < 1:
        raise ValueError("nothing to train on")
    params = model.parameters()
    steps_per_epoch = math.ceil(n_train / config.batch_size)
    optimizer = AdamW(
        params,
        base_lr=config.base_lr,
        weight_decay=config.weight_decay,
        horizon=config.max_epochs * steps_per_epoch,
    )
    rng = np.random.default_rng(config.seed)
    history = TrainingHistory()
    best_state: dict[str, np.ndarray] | None = None
    epochs_since_best = 0

    for epoch in range(config.max_epochs):
        model.train_mode()
        perm = rng.permutation(n_train)
        epoch_losses = []
        for start in range(0, n_train, config.batch_size):
            idx = perm[start : start + config.batch_size]
            optimizer.zero_grad()
            loss = batch_loss(idx, rng)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value!r} at epoch {epoch}, batch start {start}"
                )
            loss.backward()
            optimizer.step()
            epoch_losses.append(value)

        model.eval_mode()
        vl = float(val_loss())
        history.rows.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)),
                "val_loss": vl,
                "lr": optimizer.current_lr,
            }
        )
        if vl < history.best_val_loss:
            history.best_val_loss = vl
            history.best_epoch = epoch
            best_state = model.state_arrays()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                history.stopped_early = True
                break

    if best_state is not None:
        model.load_state(best_state)
    model.eval_mode()
    return history
