"""Central finite-difference checks for the tape-based gradients."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


logger = logging.getLogger(__name__)

ABS_FLOOR = 1e-6
DEFAULT_STEP = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ABS_FLOOR) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale))


def numerical_gradient(
    value: Callable[[], float],
    array: np.ndarray,
    step: float = DEFAULT_STEP,
    indices: Sequence[tuple[int, ...]] | None = None,
) -> np.ndarray:
    """Central differences of *value* w.r.t. entries of *array*, perturbed in place.

    Entries outside *indices* are left at zero.
    """
    grad = np.zeros(array.shape, dtype=np.float64)
    targets = indices if indices is not None else list(np.ndindex(*array.shape))
    for index in targets:
        original = array[index]
        array[index] = original + step
        plus = value()
        array[index] = original - step
        minus = value()
        array[index] = original
        grad[index] = (plus - minus) / (2.0 * step)
    return grad


@dataclass(frozen=True)
class GradientReport:
    worst: float
    checked: int
    retried: int = 0


def gradient_report(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = DEFAULT_STEP,
    max_entries: int | None = None,
    seed: int = 0,
    kink_step: float | None = None,
    kink_threshold: float = 1e-3,
) -> GradientReport:
    """Compare tape gradients of *loss_fn* with central differences.

    *loss_fn* must be deterministic and return a scalar; it is run once under
    a tape and then repeatedly without one. With *max_entries* only that many
    randomly chosen entries of each tensor are compared. With *kink_step*,
    entries whose error exceeds *kink_threshold* are measured again at that
    smaller step: a ReLU or max-pool kink inside ``±step`` makes the central
    difference meaningless for that entry only.
    """
    for tensor in tensors:
        tensor.grad = None
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss, tensors)
    analytic = [np.array(t.grad, dtype=np.float64) for t in tensors]
    rng = np.random.default_rng(seed)
    value = lambda: float(loss_fn().item())  # noqa: E731
    worst = 0.0
    checked = retried = 0
    for tensor, grad in zip(tensors, analytic):
        indices = list(np.ndindex(*tensor.shape))
        if max_entries is not None and len(indices) > max_entries:
            chosen = rng.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[i] for i in sorted(chosen)]
        numeric = numerical_gradient(value, tensor.data, step, indices)
        for index in indices:
            error = relative_error(grad[index], numeric[index])
            if kink_step is not None and error > kink_threshold:
                retried += 1
                fine = numerical_gradient(value, tensor.data, kink_step, [index])
                error = relative_error(grad[index], fine[index])
            worst = max(worst, error)
        checked += len(indices)
    if retried:
        logger.debug("re-measured %d of %d entries at step %g", retried, checked, kink_step)
    return GradientReport(worst=worst, checked=checked, retried=retried)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = DEFAULT_STEP,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between tape gradients and central differences."""
    return gradient_report(loss_fn, tensors, step, max_entries, seed).worst
