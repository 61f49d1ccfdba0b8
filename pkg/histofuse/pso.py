"""Global-best particle swarm optimization over linear and log10 dimensions.

Particles live in internal coordinates: log-scale dimensions are stored as
their base-10 exponent, so a learning-rate range of [1e-5, 1e-2] is searched
uniformly over exponents [-5, -2]. Objectives always receive decoded values.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError


logger = logging.getLogger(__name__)

TUNE_REPORT_SCHEMA_VERSION = "histofuse_tune_report_v1"
TRACE_HEADER = ("iteration", "best_fitness", "best_lr", "best_dropout")
SCALES = ("linear", "log10")


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    scale: str = "linear"

    def __post_init__(self) -> None:
        if self.scale not in SCALES:
            raise ConfigError(f"{self.name}: unknown scale {self.scale}")
        if not self.lower < self.upper:
            raise ConfigError(f"{self.name}: lower bound {self.lower} must be below upper bound {self.upper}")
        if self.scale == "log10" and self.lower <= 0:
            raise ConfigError(f"{self.name}: log10 bounds must be positive")

    @property
    def internal_bounds(self) -> tuple[float, float]:
        if self.scale == "log10":
            return math.log10(self.lower), math.log10(self.upper)
        return self.lower, self.upper

    def decode(self, value: float) -> float:
        decoded = 10.0**value if self.scale == "log10" else value
        return float(min(max(decoded, self.lower), self.upper))


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple[Dimension, ...]

    def __post_init__(self) -> None:
        if not self.dimensions:
            raise ConfigError("search space needs at least one dimension")
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dimension names: {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dimensions)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lows, highs = zip(*(d.internal_bounds for d in self.dimensions))
        return np.asarray(lows, dtype=np.float64), np.asarray(highs, dtype=np.float64)

    def decode(self, position: np.ndarray) -> np.ndarray:
        return np.asarray([d.decode(v) for d, v in zip(self.dimensions, position)], dtype=np.float64)


HYPERPARAMETER_SPACE = SearchSpace(
    (
        Dimension("lr", 1e-5, 1e-2, "log10"),
        Dimension("dropout", 0.3, 0.7, "linear"),
    )
)


@dataclass(frozen=True)
class SwarmConfig:
    swarm_size: int = 20
    iterations: int = 30
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    seed: int = 0
    velocity_clamp: float = 0.5

    def __post_init__(self) -> None:
        if self.swarm_size < 2:
            raise ConfigError(f"swarm_size must be >= 2, got {self.swarm_size}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if min(self.inertia, self.cognitive, self.social) < 0 or self.velocity_clamp <= 0:
            raise ConfigError("inertia, cognitive and social must be >= 0 and velocity_clamp > 0")


@dataclass
class Swarm:
    positions: np.ndarray
    velocities: np.ndarray
    best_positions: np.ndarray
    best_values: np.ndarray

    @property
    def leader(self) -> int:
        return int(np.argmin(self.best_values))


@dataclass
class PSOResult:
    best_position: np.ndarray
    best_value: float
    trace: list[tuple[int, float, np.ndarray]] = field(default_factory=list)
    history: list[np.ndarray] = field(default_factory=list)
    best_history: list[np.ndarray] = field(default_factory=list)


def _evaluate(objective: Callable[[np.ndarray], float], points: np.ndarray, threads: int) -> np.ndarray:
    def safe(point: np.ndarray) -> float:
        try:
            value = float(objective(point))
        except Exception as exc:  # any failing evaluation is scored as +inf
            logger.warning("objective failed at %s: %s", point.tolist(), exc)
            return math.inf
        if math.isnan(value):
            logger.warning("objective returned NaN at %s", point.tolist())
            return math.inf
        return value

    if threads <= 1:
        return np.asarray([safe(p) for p in points], dtype=np.float64)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.asarray(list(pool.map(safe, points)), dtype=np.float64)


def pso_optimize(
    objective: Callable[[np.ndarray], float],
    space: SearchSpace,
    config: SwarmConfig | None = None,
    threads: int = 1,
) -> PSOResult:
    """Minimize *objective* over *space*.

    Trace row 0 is the initial swarm; row i follows the i-th move. Every
    recorded swarm state is kept in ``history`` (decoded positions) and
    ``best_history`` (decoded personal bests).
    """
    config = config or SwarmConfig()
    rng = np.random.default_rng(config.seed)
    lower, upper = space.bounds()
    vmax = config.velocity_clamp * (upper - lower)
    n, d = config.swarm_size, len(space.dimensions)

    positions = rng.uniform(lower, upper, size=(n, d))
    values = _evaluate(lambda p: objective(space.decode(p)), positions, threads)
    swarm = Swarm(
        positions=positions,
        velocities=np.zeros((n, d)),
        best_positions=positions.copy(),
        best_values=values.copy(),
    )
    result = PSOResult(best_position=np.zeros(d), best_value=math.inf)

    def record(iteration: int) -> None:
        leader = swarm.leader
        decoded = space.decode(swarm.best_positions[leader])
        result.best_position = decoded
        result.best_value = float(swarm.best_values[leader])
        result.trace.append((iteration, result.best_value, decoded))
        result.history.append(np.asarray([space.decode(p) for p in swarm.positions]))
        result.best_history.append(np.asarray([space.decode(p) for p in swarm.best_positions]))

    record(0)
    for iteration in range(1, config.iterations + 1):
        leader_position = swarm.best_positions[swarm.leader]
        r1 = rng.random((n, d))
        r2 = rng.random((n, d))
        velocities = (
            config.inertia * swarm.velocities
            + config.cognitive * r1 * (swarm.best_positions - swarm.positions)
            + config.social * r2 * (leader_position - swarm.positions)
        )
        velocities = np.clip(velocities, -vmax, vmax)
        positions = swarm.positions + velocities
        outside = (positions < lower) | (positions > upper)
        positions = np.clip(positions, lower, upper)
        velocities[outside] = 0.0
        values = _evaluate(lambda p: objective(space.decode(p)), positions, threads)
        improved = values < swarm.best_values
        swarm.best_positions[improved] = positions[improved]
        swarm.best_values[improved] = values[improved]
        swarm.positions = positions
        swarm.velocities = velocities
        record(iteration)
        logger.info("pso iteration %d/%d best=%.6g at %s", iteration, config.iterations,
                    result.best_value, result.best_position.tolist())
    return result


# ---- hyperparameter tuning ----


def mock_objective(lr: float, dropout: float) -> float:
    """Planted optimum at lr=1e-3, dropout=0.5."""
    return (math.log10(lr) + 3.0) ** 2 + (dropout - 0.5) ** 2


@dataclass
class TuneResult:
    best_lr: float
    best_dropout: float
    best_fitness: float
    trace: list[tuple[int, float, float, float]]

    def trace_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for iteration, fitness, lr, dropout in self.trace:
            writer.writerow([iteration, f"{fitness:.6g}", f"{lr:.6g}", f"{dropout:.6g}"])
        return buffer.getvalue()

    def to_dict(self) -> dict:
        return {
            "schema_version": TUNE_REPORT_SCHEMA_VERSION,
            "best_lr": self.best_lr,
            "best_dropout": self.best_dropout,
            "best_fitness": self.best_fitness,
            "iterations": len(self.trace) - 1,
        }


def pso_tune_hyperparams(
    train_fn: Callable[[float, float], float],
    space: SearchSpace = HYPERPARAMETER_SPACE,
    config: SwarmConfig | None = None,
    threads: int = 1,
) -> TuneResult:
    """Search (lr, dropout) minimizing ``train_fn(lr, dropout)``, the validation loss."""
    if space.names != ("lr", "dropout"):
        raise ConfigError(f"hyperparameter space must be (lr, dropout), got {space.names}")
    result = pso_optimize(lambda p: train_fn(float(p[0]), float(p[1])), space, config, threads)
    trace = [(iteration, value, float(pos[0]), float(pos[1])) for iteration, value, pos in result.trace]
    return TuneResult(
        best_lr=float(result.best_position[0]),
        best_dropout=float(result.best_position[1]),
        best_fitness=result.best_value,
        trace=trace,
    )


__all__ = [
    "Dimension",
    "HYPERPARAMETER_SPACE",
    "PSOResult",
    "SearchSpace",
    "SwarmConfig",
    "TuneResult",
    "mock_objective",
    "pso_optimize",
    "pso_tune_hyperparams",
]
