from __future__ import annotations

import math
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest

from histofuse.errors import ConfigError
from histofuse.pso import (
    HYPERPARAMETER_SPACE,
    Dimension,
    SearchSpace,
    SwarmConfig,
    mock_objective,
    pso_optimize,
    pso_tune_hyperparams,
)


SQUARE = SearchSpace((Dimension("x", -5.0, 5.0), Dimension("y", -5.0, 5.0)))


def sphere(point: np.ndarray) -> float:
    return float(np.sum(point**2))


class SearchSpaceTests(unittest.TestCase):
    def test_validation(self) -> None:
        with self.assertRaises(ConfigError):
            Dimension("lr", 1.0, 1.0)
        with self.assertRaises(ConfigError):
            Dimension("lr", 0.0, 1.0, "log10")
        with self.assertRaises(ConfigError):
            Dimension("lr", 0.1, 1.0, "ln")
        with self.assertRaises(ConfigError):
            SearchSpace((Dimension("a", 0, 1), Dimension("a", 0, 2)))
        with self.assertRaises(ConfigError):
            SwarmConfig(swarm_size=1)

    def test_log_dimension_decodes_exponents(self) -> None:
        lr = HYPERPARAMETER_SPACE.dimensions[0]
        self.assertEqual(lr.internal_bounds, (-5.0, -2.0))
        self.assertAlmostEqual(lr.decode(-3.0), 1e-3)
        self.assertEqual(lr.decode(-1.0), 1e-2)


class SwarmTests(unittest.TestCase):
    def test_sphere_reaches_origin(self) -> None:
        result = pso_optimize(sphere, SQUARE, SwarmConfig(swarm_size=20, iterations=50, seed=0))
        self.assertLess(result.best_value, 1e-4)
        self.assertEqual(len(result.trace), 51)

    def test_best_fitness_never_increases(self) -> None:
        result = pso_optimize(lambda p: float(np.sum(np.abs(np.sin(3 * p)) + 0.1 * p**2)), SQUARE,
                              SwarmConfig(iterations=25, seed=5))
        values = [row[1] for row in result.trace]
        self.assertTrue(all(b <= a for a, b in zip(values, values[1:])))

    def test_constant_objective(self) -> None:
        result = pso_optimize(lambda p: 7.0, SQUARE, SwarmConfig(iterations=3))
        self.assertEqual(result.trace[1][1], 7.0)

    def test_nan_and_failures_count_as_infinity(self) -> None:
        def flaky(point: np.ndarray) -> float:
            if point[0] < 0:
                return math.nan
            if point[1] < 0:
                raise RuntimeError("diverged")
            return sphere(point)

        result = pso_optimize(flaky, SQUARE, SwarmConfig(iterations=10, seed=2))
        self.assertTrue(math.isfinite(result.best_value))
        self.assertGreaterEqual(result.best_position[0], 0.0)
        self.assertGreaterEqual(result.best_position[1], 0.0)

    def test_threads_do_not_change_the_outcome(self) -> None:
        config = SwarmConfig(iterations=8, seed=11)
        serial = pso_optimize(sphere, SQUARE, config, threads=1)
        parallel = pso_optimize(sphere, SQUARE, config, threads=4)
        self.assertEqual(serial.best_value, parallel.best_value)
        np.testing.assert_array_equal(serial.best_position, parallel.best_position)

    def test_without_inertia_or_social_pull_particles_approach_personal_best(self) -> None:
        config = SwarmConfig(swarm_size=6, iterations=15, inertia=0.0, cognitive=1.0, social=0.0, seed=3)
        result = pso_optimize(sphere, SQUARE, config)
        distances = [np.linalg.norm(pos - best, axis=1) for pos, best in zip(result.history, result.best_history)]
        for earlier, later in zip(distances, distances[1:]):
            self.assertTrue(np.all(later <= earlier + 1e-12))

    def test_initial_log_exponents_are_uniform(self) -> None:
        result = pso_optimize(lambda p: 0.0, HYPERPARAMETER_SPACE, SwarmConfig(swarm_size=500, iterations=1, seed=0))
        exponents = np.log10(result.history[0][:, 0])
        self.assertTrue(np.all((exponents >= -5.0) & (exponents <= -2.0)))
        self.assertGreater(kstest(exponents, "uniform", args=(-5.0, 3.0)).pvalue, 1e-3)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_positions_stay_inside_bounds(self, seed: int) -> None:
        result = pso_optimize(lambda p: -float(p[0] + p[1]), SQUARE, SwarmConfig(swarm_size=5, iterations=6, seed=seed))
        for positions in result.history:
            self.assertTrue(np.all(positions >= -5.0) and np.all(positions <= 5.0))


class TuneTests(unittest.TestCase):
    def test_mock_objective_optimum_is_recovered(self) -> None:
        result = pso_tune_hyperparams(mock_objective)
        self.assertLess(abs(math.log10(result.best_lr) + 3.0), math.log10(2.0))
        self.assertAlmostEqual(result.best_dropout, 0.5, delta=0.05)
        self.assertTrue(1e-5 <= result.best_lr <= 1e-2)
        self.assertTrue(0.3 <= result.best_dropout <= 0.7)

    def test_same_seed_same_pair(self) -> None:
        config = SwarmConfig(swarm_size=6, iterations=4, seed=9)
        first = pso_tune_hyperparams(mock_objective, config=config)
        second = pso_tune_hyperparams(mock_objective, config=config)
        self.assertEqual((first.best_lr, first.best_dropout), (second.best_lr, second.best_dropout))

    def test_trace_csv_and_report(self) -> None:
        result = pso_tune_hyperparams(mock_objective, config=SwarmConfig(swarm_size=4, iterations=2))
        lines = result.trace_csv().splitlines()
        self.assertEqual(lines[0], "iteration,best_fitness,best_lr,best_dropout")
        self.assertEqual(len(lines), 4)
        self.assertEqual(result.to_dict()["iterations"], 2)

    def test_rejects_other_spaces(self) -> None:
        with self.assertRaises(ConfigError):
            pso_tune_hyperparams(mock_objective, space=SQUARE)


if __name__ == "__main__":
    unittest.main()
