from __future__ import annotations

import tempfile
import unittest
from pathlib import Path

import numpy as np

from histofuse.errors import ConfigError, ReportInputError
from histofuse.metrics import ConfusionMatrix
from histofuse.optim import EpochHistory, EpochRecord
from histofuse.report import render_confusion, render_curves, render_pso_trace, render_report


def _history(epochs: int) -> EpochHistory:
    history = EpochHistory()
    for epoch in range(1, epochs + 1):
        history.append(EpochRecord(epoch, 1.0 / epoch, 0.5 + 0.04 * epoch, 1.1 / epoch, 0.5 + 0.03 * epoch, 1e-4))
    return history


def _group(svg: str, gid: str) -> str:
    start = svg.index(f'id="{gid}"')
    return svg[start : svg.index("</g>", start)]


class CurveTests(unittest.TestCase):
    def test_series_are_tagged_and_output_is_stable(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            first = render_curves(_history(5), Path(tmp) / "a" / "curves.svg")
            second = render_curves(_history(5), Path(tmp) / "b" / "curves.svg")
            svg = first.read_text(encoding="utf-8")
            for gid in ("train_acc", "val_acc", "train_loss", "val_loss"):
                self.assertIn(f'id="{gid}"', svg)
            self.assertIn("Accuracy/Loss vs Epoch", svg)
            self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_single_epoch_and_empty_history(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = render_curves(_history(1), Path(tmp) / "one.svg")
            self.assertIn('id="val_loss"', path.read_text(encoding="utf-8"))
            with self.assertRaises(ReportInputError):
                render_curves(EpochHistory(), Path(tmp) / "none.svg")


class ConfusionTests(unittest.TestCase):
    def test_cells_carry_their_counts(self) -> None:
        cm = ConfusionMatrix(np.array([[40, 17], [3, 90]]), ("benign", "malignant"))
        with tempfile.TemporaryDirectory() as tmp:
            svg = render_confusion(cm, Path(tmp) / "confusion.svg").read_text(encoding="utf-8")
        for (i, j), count in np.ndenumerate(cm.counts):
            self.assertIn(f">{count}<", _group(svg, f"cell_{i}_{j}"))
        self.assertIn("malignant", svg)

    def test_four_class_heatmap(self) -> None:
        cm = ConfusionMatrix(np.arange(16).reshape(4, 4), ("DC", "LC", "MC", "PC"))
        with tempfile.TemporaryDirectory() as tmp:
            svg = render_confusion(cm, Path(tmp) / "confusion.svg").read_text(encoding="utf-8")
        self.assertIn(">15<", _group(svg, "cell_3_3"))


class ReportTests(unittest.TestCase):
    def test_render_report_with_and_without_confusion(self) -> None:
        cm = ConfusionMatrix(np.array([[5, 1], [2, 7]]))
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual([p.name for p in render_report(_history(3), tmp)], ["curves.svg"])
            written = render_report(_history(3), tmp, cm)
            self.assertEqual([p.name for p in written], ["curves.svg", "confusion.svg"])

    def test_pso_trace(self) -> None:
        trace = [(0, 0.9, 1e-3, 0.5), (1, 0.7, 2e-3, 0.4), (2, 0.7, 2e-3, 0.4)]
        with tempfile.TemporaryDirectory() as tmp:
            svg = render_pso_trace(trace, Path(tmp) / "pso.svg").read_text(encoding="utf-8")
            self.assertIn('id="best_fitness"', svg)
            self.assertIn("PSO Convergence", svg)
            with self.assertRaises(ConfigError):
                render_pso_trace([], Path(tmp) / "empty.svg")


if __name__ == "__main__":
    unittest.main()
