"""Optimizers, plateau scheduling, early stopping and the training loop."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Protocol

import numpy as np

from .data import AugmentationConfig, LabeledSet, augment_batch
from .errors import ConfigError, NumericError, ReportInputError, ShapeError
from .layers import ParamSet, l2_penalty
from .metrics import MetricsReport, report_from_probabilities
from .tensor import Tape, Tensor, backward


logger = logging.getLogger(__name__)

OPTIMIZER_RULES = ("sgd_momentum", "adam", "rmsprop")
DEFAULT_LR = {"sgd_momentum": 0.01, "adam": 1e-4, "rmsprop": 1e-4}
MIN_DELTA = 1e-4
CONTINUE = "continue"
STOP = "stop"
HISTORY_HEADER = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")


# ---------------------------------------------------------------------------
# Update rules
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    rule: str
    lr: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    eps: float = 1e-7
    step: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.rule not in OPTIMIZER_RULES:
            raise KeyError(f"Unknown optimizer: {self.rule}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")

    def slot(self, name: str, key: str, like: np.ndarray) -> np.ndarray:
        per_param = self.slots.setdefault(name, {})
        if key not in per_param:
            per_param[key] = np.zeros_like(like)
        return per_param[key]


def make_optimizer(rule: str, lr: float | None = None) -> OptimizerState:
    return OptimizerState(rule=rule, lr=DEFAULT_LR.get(rule, 1e-4) if lr is None else float(lr))


def _check_shapes(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None or np.shape(grad) != np.shape(value):
            raise ShapeError(f"gradient for {name} has shape {np.shape(grad)}, parameter has {np.shape(value)}")


def sgd_momentum_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
) -> dict[str, np.ndarray]:
    """``v <- mu*v - lr*g``; ``w <- w + v``."""
    _check_shapes(params, grads)
    state.step += 1
    updated = {}
    for name, w in params.items():
        velocity = state.slot(name, "velocity", w)
        velocity[...] = state.momentum * velocity - state.lr * grads[name]
        updated[name] = (w + velocity).astype(w.dtype, copy=False)
    return updated


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
) -> dict[str, np.ndarray]:
    _check_shapes(params, grads)
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    updated = {}
    for name, w in params.items():
        g = grads[name]
        m = state.slot(name, "m", w)
        v = state.slot(name, "v", w)
        m[...] = state.beta1 * m + (1.0 - state.beta1) * g
        v[...] = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        updated[name] = (w - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(w.dtype, copy=False)
    return updated


def rmsprop_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
) -> dict[str, np.ndarray]:
    """``s <- rho*s + (1-rho)*g^2``; ``w <- w - lr*g/sqrt(s+eps)``."""
    _check_shapes(params, grads)
    state.step += 1
    updated = {}
    for name, w in params.items():
        g = grads[name]
        s = state.slot(name, "square_avg", w)
        s[...] = state.rho * s + (1.0 - state.rho) * g * g
        updated[name] = (w - state.lr * g / np.sqrt(s + state.eps)).astype(w.dtype, copy=False)
    return updated


_STEPS: dict[str, Callable[..., dict[str, np.ndarray]]] = {
    "sgd_momentum": sgd_momentum_step,
    "adam": adam_step,
    "rmsprop": rmsprop_step,
}


def apply_gradients(params: ParamSet, state: OptimizerState) -> None:
    """One update of every trainable tensor in *params* from its ``grad``."""
    trainable = params.trainable()
    values = {name: tensor.data for name, tensor in trainable}
    grads = {
        name: tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        for name, tensor in trainable
    }
    for name, value in _STEPS[state.rule](values, grads, state).items():
        params[name].data = value


# ---------------------------------------------------------------------------
# Scheduling and early stopping
# ---------------------------------------------------------------------------


@dataclass
class SchedulerState:
    lr: float
    best_loss: float = math.inf
    stagnant_epochs: int = 0
    factor: float = 0.5
    patience: int = 3
    min_lr: float = 1e-6
    min_delta: float = MIN_DELTA


def scheduler_update(state: SchedulerState, val_loss: float) -> float:
    """Record one epoch's validation loss; returns the learning rate for the next epoch."""
    if val_loss < state.best_loss - state.min_delta:
        state.best_loss = val_loss
        state.stagnant_epochs = 0
    else:
        state.stagnant_epochs += 1
    if state.stagnant_epochs > state.patience:
        reduced = max(state.lr * state.factor, state.min_lr)
        if reduced < state.lr:
            logger.info("reducing learning rate from %.3g to %.3g", state.lr, reduced)
        state.lr = reduced
        state.stagnant_epochs = 0
    return state.lr


@dataclass
class EarlyStopState:
    best_loss: float = math.inf
    best_weights: dict[str, np.ndarray] | None = None
    best_epoch: int = 0
    stagnant_epochs: int = 0
    patience: int = 5
    restore_best: bool = True
    min_delta: float = MIN_DELTA
    epoch: int = 0


def early_stop_update(state: EarlyStopState, val_loss: float, params: ParamSet) -> str:
    """Track the best weights; on the 5th consecutive stagnant epoch return ``stop``."""
    state.epoch += 1
    if val_loss < state.best_loss - state.min_delta:
        state.best_loss = val_loss
        state.best_weights = params.snapshot()
        state.best_epoch = state.epoch
        state.stagnant_epochs = 0
        return CONTINUE
    state.stagnant_epochs += 1
    if state.stagnant_epochs >= state.patience:
        if state.restore_best and state.best_weights is not None:
            params.restore(state.best_weights)
        return STOP
    return CONTINUE


# ---------------------------------------------------------------------------
# History
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class EpochHistory:
    rows: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, record: EpochRecord) -> None:
        expected = len(self.rows) + 1
        if record.epoch != expected:
            raise ConfigError(f"history epochs must be contiguous: expected {expected}, got {record.epoch}")
        self.rows.append(record)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for row in self.rows:
            writer.writerow(
                [row.epoch]
                + [f"{value:.6g}" for value in (row.train_loss, row.train_acc, row.val_loss, row.val_acc, row.lr)]
            )
        return buffer.getvalue()

    def write_csv(self, path: str | Path) -> None:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(self.to_csv(), encoding="utf-8", newline="")

    @classmethod
    def from_csv(cls, text: str) -> "EpochHistory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != HISTORY_HEADER:
            raise ReportInputError(f"history header must be {','.join(HISTORY_HEADER)}", line=1)
        history = cls()
        for line_number, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(HISTORY_HEADER):
                raise ReportInputError(f"expected {len(HISTORY_HEADER)} fields, got {len(row)}", line=line_number)
            try:
                record = EpochRecord(int(row[0]), *(float(value) for value in row[1:]))
                history.append(record)
            except (ValueError, ConfigError) as exc:
                raise ReportInputError(str(exc), line=line_number) from exc
        return history

    def to_dict(self) -> list[dict]:
        return [asdict(row) for row in self.rows]


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


class TrainableModel(Protocol):
    params: ParamSet
    l2_lambda: float
    class_labels: tuple[str, ...]

    def forward(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor: ...

    def loss(self, outputs: Tensor, labels: np.ndarray) -> Tensor: ...

    def class_probabilities(self, outputs: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    optimizer: str = "adam"
    lr: float = 1e-4
    scheduler: bool = True
    early_stopping: bool = True
    augmentation: AugmentationConfig | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in OPTIMIZER_RULES:
            raise ConfigError(f"unknown optimizer: {self.optimizer}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")


def batch_indices(order: np.ndarray, batch_size: int) -> Iterator[np.ndarray]:
    """Consecutive batches of *order*; a trailing batch of one joins the previous batch."""
    starts = list(range(0, len(order), batch_size))
    if len(starts) > 1 and len(order) - starts[-1] == 1:
        starts.pop()
    for i, start in enumerate(starts):
        end = starts[i + 1] if i + 1 < len(starts) else len(order)
        yield order[start:end]


def _score(model: TrainableModel, dataset: LabeledSet, batch_size: int) -> tuple[float, float, np.ndarray]:
    """Inference-mode loss (with L2 penalty) and accuracy over *dataset*."""
    total_loss = 0.0
    correct = 0
    probabilities = []
    for idx in batch_indices(np.arange(len(dataset)), batch_size):
        outputs = model.forward(Tensor(dataset.images[idx]), training=False)
        total_loss += float(model.loss(outputs, dataset.labels[idx]).item()) * len(idx)
        probs = model.class_probabilities(outputs.data)
        correct += int((probs.argmax(axis=1) == dataset.labels[idx]).sum())
        probabilities.append(probs)
    penalty = float(l2_penalty(model.params, model.l2_lambda).item())
    mean_loss = total_loss / len(dataset) + penalty
    return mean_loss, correct / len(dataset), np.concatenate(probabilities)


def train(
    model: TrainableModel,
    train_set: LabeledSet,
    val_set: LabeledSet,
    config: TrainConfig,
) -> tuple[TrainableModel, EpochHistory]:
    """Seeded mini-batch training with per-epoch evaluation of both splits.

    Each epoch: shuffle, then forward/loss/backward/update per batch, then
    score both splits in inference mode, then the plateau scheduler, then
    early stopping. With early stopping enabled the best weights are in
    place when this returns.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("training and validation splits must be nonempty")
    if config.batch_size < 2 and any(name.endswith("/gamma") for name, _ in model.params.trainable()):
        raise ConfigError("batch_size must be >= 2 when batch normalization layers are trainable")
    shuffle_seed, augment_seed, dropout_seed = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    augment_rng = None
    if config.augmentation is not None:
        augment_rng = np.random.default_rng([int(augment_seed.generate_state(1)[0]), config.augmentation.seed])
    optimizer = make_optimizer(config.optimizer, config.lr)
    scheduler = SchedulerState(lr=config.lr)
    stopper = EarlyStopState()
    history = EpochHistory()
    trainable = [tensor for _, tensor in model.params.trainable()]
    for epoch in range(1, config.epochs + 1):
        lr_used = optimizer.lr
        order = shuffle_rng.permutation(len(train_set))
        for batch_number, idx in enumerate(batch_indices(order, config.batch_size), start=1):
            images = train_set.images[idx]
            if config.augmentation is not None:
                images = augment_batch(images, config.augmentation, augment_rng)
            model.params.zero_grad()
            with Tape() as tape:
                outputs = model.forward(Tensor(images), training=True, rng=dropout_rng)
                loss = model.loss(outputs, train_set.labels[idx]) + l2_penalty(model.params, model.l2_lambda)
            if not loss.is_finite():
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {batch_number}",
                    epoch=epoch,
                    batch=batch_number,
                )
            backward(tape, loss, trainable)
            apply_gradients(model.params, optimizer)
        train_loss, train_acc, _ = _score(model, train_set, config.batch_size)
        val_loss, val_acc, _ = _score(model, val_set, config.batch_size)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise NumericError(f"non-finite evaluation loss at epoch {epoch}", epoch=epoch)
        history.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc, lr_used))
        logger.info(
            "epoch %d/%d train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f lr=%.3g",
            epoch,
            config.epochs,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            lr_used,
        )
        if config.scheduler:
            optimizer.lr = scheduler_update(scheduler, val_loss)
        if config.early_stopping and early_stop_update(stopper, val_loss, model.params) == STOP:
            logger.info("early stopping at epoch %d; best epoch %d", epoch, stopper.best_epoch)
            break
    if config.early_stopping and stopper.restore_best and stopper.best_weights is not None:
        model.params.restore(stopper.best_weights)
    return model, history


def evaluate(model: TrainableModel, dataset: LabeledSet, batch_size: int = 32) -> MetricsReport:
    """Inference-mode predictions scored by :mod:`histofuse.metrics`."""
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate an empty set")
    _, _, probabilities = _score(model, dataset, batch_size)
    labels = dataset.class_labels or model.class_labels
    return report_from_probabilities(probabilities, dataset.labels, labels)


def validation_loss(model: TrainableModel, dataset: LabeledSet, batch_size: int = 32) -> float:
    loss, _, _ = _score(model, dataset, batch_size)
    return loss


__all__ = [
    "CONTINUE",
    "STOP",
    "EarlyStopState",
    "EpochHistory",
    "EpochRecord",
    "OptimizerState",
    "SchedulerState",
    "TrainConfig",
    "adam_step",
    "apply_gradients",
    "batch_indices",
    "early_stop_update",
    "evaluate",
    "make_optimizer",
    "rmsprop_step",
    "scheduler_update",
    "sgd_momentum_step",
    "train",
    "validation_loss",
]
