"""
Training loop: augmented mini-batches, summed cross-entropy, Nesterov
updates, a plateau-driven learning rate and best-validation checkpoints.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from apps.core.exceptions import ConfigurationError, NumericError, StrokeBenchError
from apps.numeric.autograd import Tape
from apps.numeric.functional import cross_entropy_loss
from apps.numeric.optim import NesterovSGD
from apps.zoo.checkpoint import save_checkpoint
from apps.zoo.networks import model_forward

logger = logging.getLogger(__name__)

# Validation loss must drop by more than this to reset plateau patience
IMPROVEMENT_THRESHOLD = 1e-6

STATS_HEADER = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")


class DivergenceError(StrokeBenchError, ArithmeticError):
    """Exception raised when the training loss stops being finite."""

    def __init__(self, message, epoch):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    lr: float = 1e-4
    momentum: float = 0.5
    weight_decay: float = 0.005
    batch_size: int = 8
    plateau_patience: int = 50
    plateau_factor: float = 0.5
    min_lr: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.plateau_factor < 1:
            raise ConfigurationError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.batch_size < 1 or self.plateau_patience < 1:
            raise ConfigurationError("batch_size and plateau_patience must be >= 1")
        if self.min_lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigurationError("min_lr, momentum and weight_decay must be >= 0")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float

    def as_row(self):
        return [self.epoch] + [f"{getattr(self, name):.9g}" for name in STATS_HEADER[1:]]


@dataclass
class TrainState:
    """Mutable bookkeeping carried across epochs."""

    model: object
    lr: float
    best_val_loss: float = math.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    # loss the plateau counter measures improvement against
    plateau_reference: float = math.inf
    best_model: object = None
    rng: np.random.Generator = field(default=None, repr=False)


def lr_plateau_step(state, val_loss, config):
    """
    Update the plateau counter with the latest validation loss.

    After plateau_patience epochs without an improvement larger than
    1e-6, the learning rate is multiplied by plateau_factor (floored at
    min_lr) and the counter restarts.

    Returns:
        The learning rate for the next epoch
    """
    if val_loss < state.plateau_reference - IMPROVEMENT_THRESHOLD:
        state.plateau_reference = val_loss
        state.epochs_since_improvement = 0
        return state.lr

    state.epochs_since_improvement += 1
    if state.epochs_since_improvement >= config.plateau_patience:
        reduced = min(state.lr, max(state.lr * config.plateau_factor, config.min_lr))
        if reduced < state.lr:
            logger.info(
                f"Validation loss plateaued for {state.epochs_since_improvement} epochs; "
                f"lr {state.lr:.3g} -> {reduced:.3g}"
            )
        state.lr = reduced
        state.epochs_since_improvement = 0
    return state.lr


def evaluate_split(model, dataset, batch_size=8):
    """
    Mean per-clip loss and accuracy on centred, unaugmented clips.

    Raises:
        ConfigurationError: the split is empty
    """
    if len(dataset) == 0:
        logger.warning("Evaluation requested on an empty split")
        raise ConfigurationError("Cannot evaluate an empty split")
    total_loss = 0.0
    correct = 0
    for start in range(0, len(dataset), batch_size):
        batch, targets = dataset.batch(range(start, min(start + batch_size, len(dataset))))
        logits = model_forward(model, batch)
        total_loss += cross_entropy_loss(logits, targets).item()
        correct += int((logits.data.argmax(axis=1) == np.asarray(targets)).sum())
    return total_loss / len(dataset), correct / len(dataset)


def _train_epoch(model, dataset, optimizer, config, rng, epoch):
    order = rng.permutation(len(dataset))
    total_loss = 0.0
    correct = 0
    for start in range(0, len(order), config.batch_size):
        batch, targets = dataset.batch(order[start:start + config.batch_size], rng=rng)
        optimizer.zero_grad()
        try:
            with Tape() as tape:
                logits = model_forward(model, batch, record_tape=True)
                loss = cross_entropy_loss(logits, targets)
        except NumericError as exc:
            raise DivergenceError(str(exc), epoch) from exc
        if not math.isfinite(loss.item()):
            raise DivergenceError("training loss is not finite", epoch)
        tape.backward(loss)
        optimizer.step()
        total_loss += loss.item()
        correct += int((logits.data.argmax(axis=1) == np.asarray(targets)).sum())
    return total_loss / len(dataset), correct / len(dataset)


def train(model, train_set, validation_set, config, checkpoint_path=None, stats_path=None):
    """
    Run config.epochs epochs and return the best-validation model.

    The model passed in is trained in place; the returned model is a
    separate copy holding the parameters of the best epoch.

    Returns:
        (best Model, list of EpochStats)

    Raises:
        ConfigurationError: either split is empty
        DivergenceError: the loss became non-finite
    """
    if len(train_set) == 0 or len(validation_set) == 0:
        raise ConfigurationError("Training needs non-empty train and validation splits")
    if config.epochs == 0:
        return model, []

    state = TrainState(model=model, lr=config.lr, rng=np.random.default_rng(config.seed))
    optimizer = NesterovSGD(model.params, config.lr, config.momentum, config.weight_decay)
    stats = []
    for epoch in range(config.epochs):
        optimizer.lr = state.lr
        train_loss, train_acc = _train_epoch(model, train_set, optimizer, config, state.rng, epoch)
        try:
            val_loss, val_acc = evaluate_split(model, validation_set, config.batch_size)
        except NumericError as exc:
            raise DivergenceError(f"validation: {exc}", epoch) from exc
        if not math.isfinite(val_loss):
            raise DivergenceError("validation loss is not finite", epoch)
        stats.append(EpochStats(epoch, train_loss, train_acc, val_loss, val_acc, state.lr))

        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.best_epoch = epoch
            state.best_model = model.copy()
            if checkpoint_path is not None:
                save_checkpoint(state.best_model, checkpoint_path)

        logger.info(
            f"Epoch {epoch}: train loss {train_loss:.4f} acc {train_acc:.3f}, "
            f"val loss {val_loss:.4f} acc {val_acc:.3f}, lr {state.lr:.3g}"
        )
        lr_plateau_step(state, val_loss, config)
        if stats_path is not None:
            write_stats(stats, stats_path)

    logger.info(f"Best validation loss {state.best_val_loss:.6f} at epoch {state.best_epoch}")
    best = state.best_model
    best.metadata.update(best_epoch=state.best_epoch, best_val_loss=state.best_val_loss)
    return best, stats


def write_stats(stats, path):
    """Write `epoch,train_loss,train_acc,val_loss,val_acc,lr` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(STATS_HEADER)
        for row in stats:
            writer.writerow(row.as_row())
    return path


def read_stats(path):
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        return [
            EpochStats(int(row["epoch"]), *(float(row[name]) for name in STATS_HEADER[1:]))
            for row in reader
        ]
