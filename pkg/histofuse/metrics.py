"""Confusion matrices and classification metrics.

Binary metrics treat class index 1 (malignant) as positive. Multiclass
precision/recall/F1 are macro averages of per-class one-vs-rest counts.
Ratios with an empty denominator evaluate to 0 and carry ``degenerate=True``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import mannwhitneyu
from sklearn.metrics import confusion_matrix as _sk_confusion_matrix
from sklearn.metrics import roc_curve as _sk_roc_curve

from .errors import LabelError, ReportInputError, UndefinedMetricError


POSITIVE_CLASS = 1
CONFUSION_CORNER = "actual\\predicted"


class Ratio(float):
    """A float that remembers whether its denominator was zero."""

    degenerate: bool

    def __new__(cls, value: float, degenerate: bool = False) -> "Ratio":
        obj = super().__new__(cls, value)
        obj.degenerate = bool(degenerate)
        return obj


def _ratio(numerator: float, denominator: float) -> Ratio:
    if denominator == 0:
        return Ratio(0.0, degenerate=True)
    return Ratio(numerator / denominator)


@dataclass(frozen=True)
class BinaryCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise LabelError(f"counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise LabelError(f"confusion matrix must be square, got {counts.shape}")
        if np.any(counts < 0):
            raise LabelError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", counts)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(counts.shape[0])))
        if len(self.labels) != counts.shape[0]:
            raise LabelError(f"{len(self.labels)} labels for a {counts.shape[0]}-class matrix")

    @property
    def k(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, positive: int) -> BinaryCounts:
        tp = int(self.counts[positive, positive])
        fn = int(self.counts[positive].sum()) - tp
        fp = int(self.counts[:, positive].sum()) - tp
        return BinaryCounts(tp=tp, tn=self.total - tp - fn - fp, fp=fp, fn=fn)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow([CONFUSION_CORNER, *self.labels])
        for label, row in zip(self.labels, self.counts):
            writer.writerow([label, *(int(v) for v in row)])
        return buffer.getvalue()


def read_confusion_csv(text: str) -> ConfusionMatrix:
    rows = [row for row in csv.reader(io.StringIO(text))]
    if not rows or len(rows[0]) < 2:
        raise ReportInputError("confusion CSV needs a header row with class labels", line=1)
    labels = tuple(rows[0][1:])
    k = len(labels)
    counts = []
    for line_number, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != k + 1:
            raise ReportInputError(f"expected {k + 1} fields, got {len(row)}", line=line_number)
        try:
            values = [int(cell) for cell in row[1:]]
        except ValueError as exc:
            raise ReportInputError(f"non-integer count: {exc}", line=line_number) from exc
        if any(v < 0 for v in values):
            raise ReportInputError("negative count", line=line_number)
        counts.append(values)
    if len(counts) != k:
        raise ReportInputError(f"expected {k} count rows, got {len(counts)}", line=len(rows))
    return ConfusionMatrix(np.asarray(counts, dtype=np.int64), labels)


def confusion_matrix(
    predicted: Sequence[int] | np.ndarray,
    actual: Sequence[int] | np.ndarray,
    k: int,
    labels: Sequence[str] = (),
) -> ConfusionMatrix:
    """Cell (a, p) counts samples whose actual class is a and predicted class is p."""
    predicted = np.asarray(predicted, dtype=np.int64).reshape(-1)
    actual = np.asarray(actual, dtype=np.int64).reshape(-1)
    if predicted.shape != actual.shape:
        raise LabelError(f"{predicted.size} predictions for {actual.size} labels")
    for name, values in (("predicted", predicted), ("actual", actual)):
        if values.size and (values.min() < 0 or values.max() >= k):
            raise LabelError(f"{name} labels must lie in [0, {k})")
    if predicted.size == 0:
        return ConfusionMatrix(np.zeros((k, k), dtype=np.int64), tuple(labels))
    counts = _sk_confusion_matrix(actual, predicted, labels=list(range(k)))
    return ConfusionMatrix(counts, tuple(labels))


def precision(c: BinaryCounts) -> Ratio:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: BinaryCounts) -> Ratio:
    return _ratio(c.tp, c.tp + c.fn)


def specificity(c: BinaryCounts) -> Ratio:
    return _ratio(c.tn, c.tn + c.fp)


def f1(p: float, r: float) -> Ratio:
    if p + r == 0:
        return Ratio(0.0, degenerate=True)
    return Ratio(2.0 * p * r / (p + r))


def accuracy(c: BinaryCounts | ConfusionMatrix) -> Ratio:
    if isinstance(c, ConfusionMatrix):
        return _ratio(int(np.trace(c.counts)), c.total)
    return _ratio(c.tp + c.tn, c.total)


def _split_scores(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if scores.shape != labels.shape:
        raise LabelError(f"{scores.size} scores for {labels.size} labels")
    if np.any((labels != 0) & (labels != 1)):
        raise LabelError("ROC labels must be 0 or 1")
    positives = scores[labels == 1]
    negatives = scores[labels == 0]
    if positives.size == 0 or negatives.size == 0:
        raise UndefinedMetricError("ROC AUC needs at least one positive and one negative sample")
    return positives, negatives


def roc_auc(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Mann-Whitney AUC: share of positive/negative pairs ranked correctly, ties count half."""
    positives, negatives = _split_scores(scores, labels)
    u_statistic = mannwhitneyu(positives, negatives, alternative="two-sided", method="asymptotic").statistic
    return float(u_statistic) / (positives.size * negatives.size)


def roc_curve(
    scores: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) with thresholds descending; the first threshold is +inf."""
    _split_scores(scores, labels)
    fpr, tpr, thresholds = _sk_roc_curve(
        np.asarray(labels, dtype=np.int64).reshape(-1),
        np.asarray(scores, dtype=np.float64).reshape(-1),
        drop_intermediate=False,
    )
    return fpr, tpr, thresholds


@dataclass(frozen=True)
class MacroMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    degenerate: tuple[str, ...] = ()


def macro_metrics(cm: ConfusionMatrix) -> MacroMetrics:
    """Unweighted per-class means; degenerate per-class ratios are named ``metric[label]``."""
    if cm.k < 2:
        raise LabelError("macro metrics need at least 2 classes")
    per_class = [cm.one_vs_rest(c) for c in range(cm.k)]
    precisions = [precision(c) for c in per_class]
    recalls = [recall(c) for c in per_class]
    f1s = [f1(p, r) for p, r in zip(precisions, recalls)]
    degenerate = [
        f"{name}[{label}]"
        for label, values in zip(cm.labels, zip(precisions, recalls, f1s))
        for name, value in zip(("precision", "recall", "f1"), values)
        if value.degenerate
    ]
    return MacroMetrics(
        precision=float(np.mean(precisions)),
        recall=float(np.mean(recalls)),
        f1=float(np.mean(f1s)),
        accuracy=float(accuracy(cm)),
        degenerate=tuple(degenerate),
    )


# ---- reports ----


@dataclass(frozen=True)
class MetricsReport:
    kind: str
    confusion: ConfusionMatrix
    accuracy: float
    precision: float
    recall: float
    f1: float
    specificity: float | None = None
    auc: float | None = None
    degenerate: tuple[str, ...] = field(default=())

    @property
    def samples(self) -> int:
        return self.confusion.total

    def fields(self) -> list[tuple[str, str]]:
        if self.kind == "binary":
            auc = "undefined" if self.auc is None else f"{self.auc:.6f}"
            pairs = [
                ("kind", self.kind),
                ("samples", str(self.samples)),
                ("accuracy", f"{self.accuracy:.6f}"),
                ("precision", f"{self.precision:.6f}"),
                ("recall", f"{self.recall:.6f}"),
                ("f1", f"{self.f1:.6f}"),
                ("specificity", f"{self.specificity or 0.0:.6f}"),
                ("auc", auc),
            ]
        else:
            pairs = [
                ("kind", self.kind),
                ("samples", str(self.samples)),
                ("accuracy", f"{self.accuracy:.6f}"),
                ("macro_precision", f"{self.precision:.6f}"),
                ("macro_recall", f"{self.recall:.6f}"),
                ("macro_f1", f"{self.f1:.6f}"),
            ]
        pairs.append(("degenerate", ";".join(self.degenerate)))
        return pairs

    def to_text(self) -> str:
        return "".join(f"{key}={value}\n" for key, value in self.fields())

    def to_csv(self) -> str:
        pairs = self.fields()
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow([key for key, _ in pairs])
        writer.writerow([value for _, value in pairs])
        return buffer.getvalue()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "samples": self.samples,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "specificity": self.specificity,
            "auc": self.auc,
            "degenerate": list(self.degenerate),
            "labels": list(self.confusion.labels),
            "confusion": self.confusion.counts.tolist(),
        }


def binary_report(
    predicted: Sequence[int] | np.ndarray,
    actual: Sequence[int] | np.ndarray,
    scores: Sequence[float] | np.ndarray | None = None,
    labels: Sequence[str] = ("benign", "malignant"),
) -> MetricsReport:
    cm = confusion_matrix(predicted, actual, 2, labels)
    counts = cm.one_vs_rest(POSITIVE_CLASS)
    values = {
        "accuracy": accuracy(counts),
        "precision": precision(counts),
        "recall": recall(counts),
        "specificity": specificity(counts),
    }
    values["f1"] = f1(values["precision"], values["recall"])
    degenerate = [name for name, value in values.items() if value.degenerate]
    auc = None
    if scores is not None:
        try:
            auc = roc_auc(scores, actual)
        except UndefinedMetricError:
            degenerate.append("auc")
    return MetricsReport(
        kind="binary",
        confusion=cm,
        accuracy=float(values["accuracy"]),
        precision=float(values["precision"]),
        recall=float(values["recall"]),
        f1=float(values["f1"]),
        specificity=float(values["specificity"]),
        auc=auc,
        degenerate=tuple(sorted(degenerate)),
    )


def multiclass_report(
    predicted: Sequence[int] | np.ndarray,
    actual: Sequence[int] | np.ndarray,
    k: int,
    labels: Sequence[str] = (),
) -> MetricsReport:
    cm = confusion_matrix(predicted, actual, k, labels)
    macro = macro_metrics(cm)
    return MetricsReport(
        kind="multiclass",
        confusion=cm,
        accuracy=macro.accuracy,
        precision=macro.precision,
        recall=macro.recall,
        f1=macro.f1,
        degenerate=(("accuracy",) if cm.total == 0 else ()) + macro.degenerate,
    )


def report_from_probabilities(
    probabilities: np.ndarray,
    actual: Sequence[int] | np.ndarray,
    labels: Sequence[str],
) -> MetricsReport:
    """Argmax predictions; binary reports also score ROC AUC on the positive-class column."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    predicted = probabilities.argmax(axis=1)
    if probabilities.shape[1] == 2:
        return binary_report(predicted, actual, probabilities[:, POSITIVE_CLASS], labels)
    return multiclass_report(predicted, actual, probabilities.shape[1], labels)
