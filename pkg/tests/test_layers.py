from __future__ import annotations

import math
import unittest

import numpy as np

from histofuse.errors import ConfigError, LabelError, ShapeError
from histofuse.layers import (
    LayerNode,
    LayerSpec,
    ParamSet,
    binary_crossentropy,
    categorical_crossentropy,
    chain,
    forward_layer,
    get_loss,
    infer_shapes,
    init_params,
    l2_penalty,
    one_hot,
)
from histofuse.tensor import Tensor


class LayerSpecTests(unittest.TestCase):
    def test_rejects_unknown_kind_and_bad_arguments(self) -> None:
        with self.assertRaises(ConfigError):
            LayerSpec(kind="attention")
        with self.assertRaises(ConfigError):
            LayerSpec(kind="conv", filters=0, kernel=3)
        with self.assertRaises(ConfigError):
            LayerSpec(kind="dense", units=0)
        with self.assertRaises(ConfigError):
            LayerSpec(kind="dropout", rate=1.0)
        with self.assertRaises(ConfigError):
            LayerSpec(kind="conv", filters=2, kernel=3, padding="full")

    def test_pool_stride_defaults_to_window(self) -> None:
        self.assertEqual(LayerSpec(kind="maxpool", window=3).effective_stride, 3)
        self.assertEqual(LayerSpec(kind="maxpool", window=3, stride=1).effective_stride, 1)
        self.assertEqual(LayerSpec(kind="conv", filters=1, kernel=3).effective_stride, 1)


class ShapeInferenceTests(unittest.TestCase):
    def test_baseline_like_stack(self) -> None:
        nodes = chain(
            [
                LayerSpec(kind="conv", filters=16, kernel=4, activation="relu"),
                LayerSpec(kind="maxpool", window=2),
                LayerSpec(kind="conv", filters=32, kernel=4, activation="relu"),
                LayerSpec(kind="maxpool", window=2),
                LayerSpec(kind="flatten"),
                LayerSpec(kind="dense", units=1, activation="sigmoid"),
            ]
        )
        shapes = infer_shapes(nodes, (32, 32, 3))
        self.assertEqual(shapes["00_conv"], (29, 29, 16))
        self.assertEqual(shapes["01_maxpool"], (14, 14, 16))
        self.assertEqual(shapes["03_maxpool"], (5, 5, 32))
        self.assertEqual(shapes["04_flatten"], (800,))
        self.assertEqual(shapes["05_dense"], (1,))

    def test_concat_sums_channels(self) -> None:
        nodes = [
            LayerNode("in", LayerSpec(kind="input")),
            LayerNode("a", LayerSpec(kind="conv", filters=4, kernel=3, padding="same"), ("in",)),
            LayerNode("cat", LayerSpec(kind="concat"), ("in", "a")),
            LayerNode("pool", LayerSpec(kind="gap"), ("cat",)),
        ]
        shapes = infer_shapes(nodes, (8, 8, 3))
        self.assertEqual(shapes["cat"], (8, 8, 7))
        self.assertEqual(shapes["pool"], (7,))

    def test_errors(self) -> None:
        with self.assertRaises(ConfigError):
            infer_shapes(chain([LayerSpec(kind="conv", filters=1, kernel=5)]), (4, 4, 1))
        with self.assertRaises(ConfigError):
            infer_shapes(chain([LayerSpec(kind="dense", units=3)]), (4, 4, 1))
        with self.assertRaises(ConfigError):
            infer_shapes([LayerNode("x", LayerSpec(kind="gap"), ("missing",))], (4, 4, 1))
        with self.assertRaises(ConfigError):
            infer_shapes(
                [LayerNode("in", LayerSpec(kind="input")), LayerNode("in", LayerSpec(kind="gap"), ("in",))],
                (4, 4, 1),
            )


class ParamSetTests(unittest.TestCase):
    def _layers(self) -> list[LayerSpec]:
        return [
            LayerSpec(kind="conv", filters=4, kernel=3, regularized=True),
            LayerSpec(kind="batchnorm"),
            LayerSpec(kind="gap"),
            LayerSpec(kind="dense", units=2, regularized=True),
        ]

    def test_counts_and_initialization(self) -> None:
        params = init_params(self._layers(), (6, 6, 3), seed=5)
        # conv 3*3*3*4 + 4, batchnorm 4 * 4, dense 4*2 + 2
        self.assertEqual(params.count(), 112 + 16 + 10)
        self.assertEqual(params.count(trainable_only=True), 112 + 8 + 10)
        np.testing.assert_array_equal(params["00_conv/bias"].data, np.zeros(4))
        np.testing.assert_array_equal(params["01_batchnorm/gamma"].data, np.ones(4))
        limit = math.sqrt(6.0 / (27 + 36))
        self.assertLessEqual(float(np.abs(params["00_conv/kernel"].data).max()), limit)
        self.assertEqual(len(params.regularized()), 2)

    def test_same_seed_same_weights(self) -> None:
        a = init_params(self._layers(), (6, 6, 3), seed=9)
        b = init_params(self._layers(), (6, 6, 3), seed=9)
        c = init_params(self._layers(), (6, 6, 3), seed=10)
        for name in a:
            np.testing.assert_array_equal(a[name].data, b[name].data)
        self.assertFalse(np.array_equal(a["00_conv/kernel"].data, c["00_conv/kernel"].data))

    def test_snapshot_restore_and_astype(self) -> None:
        params = init_params(self._layers(), (6, 6, 3), seed=1)
        saved = params.snapshot()
        params["03_dense/kernel"].data[:] = 0.0
        params.restore(saved)
        np.testing.assert_array_equal(params["03_dense/kernel"].data, saved["03_dense/kernel"])
        wide = params.astype(np.float64)
        self.assertEqual(wide["03_dense/kernel"].data.dtype, np.float64)
        self.assertFalse(wide.is_trainable("01_batchnorm/moving_mean"))
        self.assertEqual(len(wide.regularized()), 2)

    def test_duplicate_name_rejected(self) -> None:
        params = ParamSet()
        params.add("w", Tensor(np.ones(2)))
        with self.assertRaises(ConfigError):
            params.add("w", Tensor(np.ones(2)))

    def test_frozen_batchnorm_ignores_training_flag(self) -> None:
        node = LayerNode("bn", LayerSpec(kind="batchnorm", trainable=False))
        params = init_params([node], (3,), seed=0)
        x = Tensor(np.array([[1.0, 2.0, 3.0], [3.0, 4.0, 5.0]]))
        out = forward_layer(node, [x], params, training=True)
        np.testing.assert_allclose(out.data, x.data / np.sqrt(1.0 + 1e-3), rtol=1e-5)
        np.testing.assert_array_equal(params["bn/moving_mean"].data, np.zeros(3))


class LossTests(unittest.TestCase):
    def test_one_hot(self) -> None:
        np.testing.assert_array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])
        with self.assertRaises(LabelError):
            one_hot([3], 3)

    def test_binary_crossentropy_value_and_clamp(self) -> None:
        p = Tensor(np.array([[0.9], [0.2]], dtype=np.float64))
        expected = -(math.log(0.9) + math.log(0.8)) / 2.0
        self.assertAlmostEqual(binary_crossentropy(p, [1, 0]).item(), expected, places=9)
        certain = binary_crossentropy(Tensor(np.array([0.0], dtype=np.float64)), [1])
        self.assertAlmostEqual(certain.item(), -math.log(1e-7), places=6)
        with self.assertRaises(LabelError):
            binary_crossentropy(p, [1, 2])
        with self.assertRaises(ShapeError):
            binary_crossentropy(p, [1])

    def test_categorical_crossentropy(self) -> None:
        q = Tensor(np.array([[0.7, 0.2, 0.1], [0.25, 0.25, 0.5]], dtype=np.float64))
        loss = categorical_crossentropy(q, one_hot([0, 2], 3, dtype=np.float64))
        self.assertAlmostEqual(loss.item(), -(math.log(0.7) + math.log(0.5)) / 2.0, places=9)
        with self.assertRaises(LabelError):
            categorical_crossentropy(q, np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))

    def test_closed_form_values(self) -> None:
        half = Tensor(np.full((3, 1), 0.5, dtype=np.float64))
        self.assertAlmostEqual(binary_crossentropy(half, [0, 1, 1]).item(), math.log(2.0), places=9)
        uniform = Tensor(np.full((2, 4), 0.25, dtype=np.float64))
        self.assertAlmostEqual(
            categorical_crossentropy(uniform, one_hot([1, 3], 4, dtype=np.float64)).item(), math.log(4.0), places=9
        )
        q = Tensor(np.array([[0.7, 0.1, 0.1, 0.1]], dtype=np.float64))
        self.assertAlmostEqual(categorical_crossentropy(q, one_hot([0], 4, dtype=np.float64)).item(), 0.3567, places=4)
        single = ParamSet()
        single.add("k", Tensor(np.array([2.0])), regularized=True)
        self.assertAlmostEqual(l2_penalty(single, 0.001).item(), 0.004, places=12)
        single["k"].data = -single["k"].data
        self.assertAlmostEqual(l2_penalty(single, 0.001).item(), 0.004, places=12)

    def test_l2_penalty_counts_kernels_only(self) -> None:
        params = ParamSet()
        params.add("k", Tensor(np.array([1.0, 2.0])), regularized=True)
        params.add("b", Tensor(np.array([10.0])))
        self.assertAlmostEqual(l2_penalty(params, 0.001).item(), 0.005, places=9)
        self.assertEqual(l2_penalty(params, 0.0).item(), 0.0)
        with self.assertRaises(ConfigError):
            l2_penalty(params, -1.0)

    def test_loss_registry(self) -> None:
        self.assertIs(get_loss("binary_crossentropy"), binary_crossentropy)
        with self.assertRaises(KeyError):
            get_loss("hinge")


if __name__ == "__main__":
    unittest.main()
