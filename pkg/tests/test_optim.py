from __future__ import annotations

import math
import unittest

import numpy as np

from histofuse.data import AugmentationConfig, LabeledSet
from histofuse.errors import ConfigError, NumericError, ReportInputError, ShapeError
from histofuse.layers import LayerNode, LayerSpec, ParamSet
from histofuse.models import ModelGraph
from histofuse.optim import (
    CONTINUE,
    STOP,
    EarlyStopState,
    EpochHistory,
    EpochRecord,
    OptimizerState,
    SchedulerState,
    TrainConfig,
    adam_step,
    batch_indices,
    early_stop_update,
    evaluate,
    make_optimizer,
    rmsprop_step,
    scheduler_update,
    sgd_momentum_step,
    train,
)
from histofuse.tensor import Tensor


def _tiny_model(seed: int = 0, side: int = 4) -> ModelGraph:
    nodes = [
        LayerNode("input", LayerSpec(kind="input")),
        LayerNode("flatten", LayerSpec(kind="flatten"), ("input",)),
        LayerNode("hidden", LayerSpec(kind="dense", units=32, activation="relu"), ("flatten",)),
        LayerNode("output", LayerSpec(kind="dense", units=1, activation="sigmoid"), ("hidden",)),
    ]
    return ModelGraph(
        kind="tiny",
        nodes=nodes,
        input_shape=(side, side, 3),
        output_id="output",
        class_labels=("benign", "malignant"),
        loss_name="binary_crossentropy",
        seed=seed,
    )


def _random_set(n: int, side: int = 4, seed: int = 0) -> LabeledSet:
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.0, 1.0, size=(n, side, side, 3))
    labels = np.arange(n) % 2
    return LabeledSet(images, labels, ("benign", "malignant"))


def _reference_scheduler(losses: list[float], lr: float) -> list[float]:
    best, stagnant, out = math.inf, 0, []
    for loss in losses:
        if loss < best - 1e-4:
            best, stagnant = loss, 0
        else:
            stagnant += 1
        if stagnant > 3:
            lr, stagnant = max(lr * 0.5, 1e-6), 0
        out.append(lr)
    return out


class UpdateRuleTests(unittest.TestCase):
    def test_first_steps_match_closed_forms(self) -> None:
        w = {"w": np.array([1.0, -1.0])}
        g = {"w": np.array([0.5, -2.0])}
        sgd = sgd_momentum_step(w, g, make_optimizer("sgd_momentum"))
        np.testing.assert_allclose(sgd["w"], [1.0 - 0.005, -1.0 + 0.02])
        adam = adam_step(w, g, make_optimizer("adam", 0.1))
        np.testing.assert_allclose(adam["w"], [0.9, -0.9], rtol=1e-6)
        rms = rmsprop_step(w, g, make_optimizer("rmsprop", 0.01))
        expected = w["w"] - 0.01 * g["w"] / np.sqrt(0.1 * g["w"] ** 2 + 1e-7)
        np.testing.assert_allclose(rms["w"], expected)

    def test_momentum_accumulates(self) -> None:
        state = make_optimizer("sgd_momentum", 0.1)
        w = {"w": np.array([0.0])}
        g = {"w": np.array([1.0])}
        w = sgd_momentum_step(w, g, state)
        w = sgd_momentum_step(w, g, state)
        # v1 = -0.1, v2 = 0.9 * -0.1 - 0.1
        np.testing.assert_allclose(w["w"], [-0.1 - 0.19])
        self.assertEqual(state.step, 2)
        self.assertEqual(state.slots["w"]["velocity"].shape, (1,))

    def test_each_rule_descends_a_convex_quadratic(self) -> None:
        for rule in ("sgd_momentum", "adam", "rmsprop"):
            w = {"w": np.array([3.0, -2.0])}
            before = float((w["w"] ** 2).sum())
            state = make_optimizer(rule, 1e-3)
            step = {"sgd_momentum": sgd_momentum_step, "adam": adam_step, "rmsprop": rmsprop_step}[rule]
            after = step(w, {"w": 2.0 * w["w"]}, state)
            self.assertLess(float((after["w"] ** 2).sum()), before, msg=rule)

    def test_validation(self) -> None:
        with self.assertRaises(KeyError):
            OptimizerState(rule="adagrad", lr=0.1)
        with self.assertRaises(ConfigError):
            OptimizerState(rule="adam", lr=0.0)
        with self.assertRaises(ShapeError):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, make_optimizer("adam"))

    def test_default_learning_rates(self) -> None:
        self.assertEqual(make_optimizer("sgd_momentum").lr, 0.01)
        self.assertEqual(make_optimizer("adam").lr, 1e-4)
        self.assertEqual(make_optimizer("rmsprop").lr, 1e-4)


class SchedulerTests(unittest.TestCase):
    def test_flat_losses_halve_after_patience(self) -> None:
        state = SchedulerState(lr=1e-4)
        lrs = [scheduler_update(state, 1.0) for _ in range(5)]
        self.assertEqual(lrs[:4], [1e-4] * 4)
        self.assertAlmostEqual(lrs[4], 5e-5)

    def test_improving_losses_keep_rate(self) -> None:
        state = SchedulerState(lr=1e-4)
        self.assertEqual({scheduler_update(state, 1.0 / epoch) for epoch in range(1, 12)}, {1e-4})

    def test_rate_floors_at_minimum(self) -> None:
        state = SchedulerState(lr=2e-6)
        lrs = [scheduler_update(state, 1.0) for _ in range(30)]
        self.assertEqual(min(lrs), 1e-6)

    def test_matches_reference_on_random_traces(self) -> None:
        rng = np.random.default_rng(4)
        for _ in range(50):
            losses = list(np.round(rng.uniform(0.0, 1.0, size=40), 2))
            state = SchedulerState(lr=1e-3)
            emitted = [scheduler_update(state, loss) for loss in losses]
            self.assertEqual(emitted, _reference_scheduler(losses, 1e-3))


class EarlyStopTests(unittest.TestCase):
    def _run(self, losses: list[float]) -> tuple[list[str], ParamSet]:
        params = ParamSet()
        weight = params.add("w", Tensor(np.zeros(1)))
        decisions = []
        for loss in losses:
            weight.data = np.array([loss])
            decisions.append(early_stop_update(self._state, loss, params))
            if decisions[-1] == STOP:
                break
        return decisions, params

    def setUp(self) -> None:
        self._state = EarlyStopState()

    def test_monotone_losses_never_stop(self) -> None:
        decisions, _ = self._run([5.0, 4.0, 3.0, 2.0, 1.0, 0.5, 0.25])
        self.assertEqual(set(decisions), {CONTINUE})

    def test_stops_on_fifth_stagnant_epoch_and_restores_best(self) -> None:
        decisions, params = self._run([1.0, 0.9, 0.95, 0.95, 0.95, 0.95, 0.95])
        self.assertEqual(decisions, [CONTINUE] * 6 + [STOP])
        np.testing.assert_array_equal(params["w"].data, [0.9])
        self.assertEqual(self._state.best_epoch, 2)

    def test_counter_resets_on_improvement(self) -> None:
        decisions, _ = self._run([1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.4])
        self.assertEqual(set(decisions), {CONTINUE})
        self.assertEqual(self._state.stagnant_epochs, 0)


class BatchingTests(unittest.TestCase):
    def test_trailing_singleton_joins_previous_batch(self) -> None:
        sizes = [len(b) for b in batch_indices(np.arange(33), 16)]
        self.assertEqual(sizes, [16, 17])
        self.assertEqual([len(b) for b in batch_indices(np.arange(34), 16)], [16, 16, 2])
        self.assertEqual([len(b) for b in batch_indices(np.arange(1), 16)], [1])

    def test_batches_cover_order_once(self) -> None:
        order = np.random.default_rng(0).permutation(50)
        joined = np.concatenate(list(batch_indices(order, 7)))
        np.testing.assert_array_equal(joined, order)


class HistoryTests(unittest.TestCase):
    def test_csv_format(self) -> None:
        history = EpochHistory()
        history.append(EpochRecord(1, 0.693147181, 0.5, 0.7, 0.25, 1e-4))
        lines = history.to_csv().splitlines()
        self.assertEqual(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc,lr")
        self.assertEqual(lines[1], "1,0.693147,0.5,0.7,0.25,0.0001")
        parsed = EpochHistory.from_csv(history.to_csv())
        self.assertEqual(len(parsed), 1)
        self.assertAlmostEqual(parsed.rows[0].train_loss, 0.693147)

    def test_rejects_malformed_input(self) -> None:
        with self.assertRaises(ReportInputError) as bad_header:
            EpochHistory.from_csv("epoch,loss\n1,0.5\n")
        self.assertEqual(bad_header.exception.line, 1)
        text = "epoch,train_loss,train_acc,val_loss,val_acc,lr\n1,1,1,1,1,1\n3,1,1,1,1,1\n"
        with self.assertRaises(ReportInputError) as gap:
            EpochHistory.from_csv(text)
        self.assertEqual(gap.exception.line, 3)
        with self.assertRaises(ConfigError):
            EpochHistory().append(EpochRecord(2, 0, 0, 0, 0, 0))


class _Oracle:
    """Reads the label planted in pixel (0, 0, 0)."""

    params = ParamSet()
    l2_lambda = 0.0
    class_labels = ("benign", "malignant")

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        labels = x.data[:, 0, 0, 0].astype(int)
        return Tensor(np.eye(2)[labels])

    def loss(self, outputs: Tensor, labels: np.ndarray) -> Tensor:
        return Tensor(np.asarray(0.0))

    def class_probabilities(self, outputs: np.ndarray) -> np.ndarray:
        return outputs


class TrainingLoopTests(unittest.TestCase):
    def test_single_epoch_gives_single_row(self) -> None:
        data = _random_set(10)
        _, history = train(_tiny_model(), data, data, TrainConfig(batch_size=4, epochs=1, lr=1e-3))
        self.assertEqual(len(history), 1)
        self.assertEqual(history.rows[0].lr, 1e-3)

    def test_same_seed_gives_identical_history(self) -> None:
        data = _random_set(12, side=8)
        config = TrainConfig(batch_size=5, epochs=2, seed=3, lr=1e-3, augmentation=AugmentationConfig())
        _, first = train(_tiny_model(side=8), data, data, config)
        _, second = train(_tiny_model(side=8), data, data, config)
        self.assertEqual(first.to_csv(), second.to_csv())

    def test_memorizes_sixteen_samples(self) -> None:
        data = _random_set(16, seed=1)
        config = TrainConfig(batch_size=4, epochs=200, lr=1e-2, scheduler=False, early_stopping=False)
        _, history = train(_tiny_model(seed=1), data, data, config)
        self.assertLess(history.rows[-1].train_loss, 0.05)

    def test_nan_loss_aborts_with_location(self) -> None:
        data = _random_set(6)
        model = _tiny_model()
        model.params["output/bias"].data[:] = np.nan
        with self.assertRaises(NumericError) as ctx:
            train(model, data, data, TrainConfig(batch_size=3, epochs=1))
        self.assertEqual((ctx.exception.epoch, ctx.exception.batch), (1, 1))

    def test_trainable_batchnorm_rejects_single_sample_batches(self) -> None:
        nodes = [
            LayerNode("input", LayerSpec(kind="input")),
            LayerNode("flatten", LayerSpec(kind="flatten"), ("input",)),
            LayerNode("hidden", LayerSpec(kind="dense", units=8, activation="relu"), ("flatten",)),
            LayerNode("hidden_bn", LayerSpec(kind="batchnorm"), ("hidden",)),
            LayerNode("output", LayerSpec(kind="dense", units=1, activation="sigmoid"), ("hidden_bn",)),
        ]
        model = ModelGraph("tiny_bn", nodes, (4, 4, 3), "output", ("benign", "malignant"), "binary_crossentropy")
        data = _random_set(6)
        with self.assertRaises(ConfigError):
            train(model, data, data, TrainConfig(batch_size=1, epochs=1))
        _, history = train(model, data, data, TrainConfig(batch_size=2, epochs=1))
        self.assertEqual(len(history), 1)
        _, history = train(_tiny_model(), data, data, TrainConfig(batch_size=1, epochs=1))
        self.assertEqual(len(history), 1)

    def test_empty_split_rejected(self) -> None:
        data = _random_set(4)
        with self.assertRaises(ConfigError):
            train(_tiny_model(), data, data.subset([]), TrainConfig(epochs=1))

    def test_config_validation(self) -> None:
        with self.assertRaises(ConfigError):
            TrainConfig(batch_size=0)
        with self.assertRaises(ConfigError):
            TrainConfig(epochs=0)
        with self.assertRaises(ConfigError):
            TrainConfig(optimizer="adagrad")

    def test_evaluate_perfect_model(self) -> None:
        images = np.zeros((6, 2, 2, 3))
        labels = np.array([0, 1, 1, 0, 1, 0])
        images[:, 0, 0, 0] = labels
        report = evaluate(_Oracle(), LabeledSet(images, labels, ("benign", "malignant")), batch_size=4)
        self.assertEqual(report.accuracy, 1.0)
        self.assertEqual(report.auc, 1.0)
        self.assertEqual(report.confusion.counts.tolist(), [[3, 0], [0, 3]])


if __name__ == "__main__":
    unittest.main()
