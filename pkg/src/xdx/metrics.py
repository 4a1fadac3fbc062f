"""Confusion matrices, accuracy, ROC/AUC, and multi-label accuracy.

AUC uses trapezoidal integration over tie-grouped thresholds with integer
true/false-positive counts, which makes it exactly (not approximately)
the Mann-Whitney pairwise ranking statistic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .labels import CHEST_CONDITIONS, REFERENCE_AUC


@dataclass
class ConfusionMatrix:
    """Rows are actual classes, columns predicted."""

    class_names: list
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(actual: Sequence, predicted: Sequence, class_names: Sequence[str]) -> ConfusionMatrix:
    if len(actual) != len(predicted):
        raise ValueError(f"length mismatch: {len(actual)} actual vs {len(predicted)} predicted")
    index = {name: i for i, name in enumerate(class_names)}
    counts = np.zeros((len(class_names), len(class_names)), dtype=np.int64)
    for a, p in zip(actual, predicted):
        if a not in index:
            raise ValueError(f"unknown actual label {a!r}")
        if p not in index:
            raise ValueError(f"unknown predicted label {p!r}")
        counts[index[a], index[p]] += 1
    return ConfusionMatrix(list(class_names), counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts)) / cm.total


@dataclass
class RocCurve:
    """Points run from (0,0) to (1,1); fpr and tpr are non-decreasing."""

    points: list  # [(fpr, tpr), ...]
    auc: float


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """Threshold sweep over distinct scores, descending; equal scores are
    grouped into one step. AUC is trapezoidal on the integer counts, so it
    equals the pairwise Mann-Whitney statistic exactly, ties included.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores and labels must be equal-length vectors, got {s.shape} and {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    pos = int(y.sum())
    neg = int(y.size - pos)
    if pos == 0 or neg == 0:
        raise ValueError("ROC needs at least one positive and one negative label")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # Last index of each tie group.
    distinct = np.nonzero(np.diff(s_sorted))[0]
    steps = np.concatenate([distinct, [s.size - 1]])
    tp = np.cumsum(y_sorted)[steps]
    fp = steps + 1 - tp

    tps = np.concatenate([[0], tp])
    fps = np.concatenate([[0], fp])

    # 2 * (Mann-Whitney numerator) accumulated in exact integer arithmetic.
    twice_area = int(np.sum((fps[1:] - fps[:-1]) * (tps[1:] + tps[:-1])))
    auc = twice_area / float(2 * pos * neg)

    points = [(float(f) / neg, float(t) / pos) for f, t in zip(fps, tps)]
    return RocCurve(points, auc)


def multilabel_mean_accuracy(
    probs: np.ndarray, targets: np.ndarray, threshold: float = 0.5
) -> float:
    """Mean over labels of per-label binary accuracy; prediction is
    positive at probability >= threshold (inclusive)."""
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(targets)
    if p.shape != t.shape or p.ndim != 2:
        raise ValueError(f"probs and targets must be matching 2-D arrays, got {p.shape} and {t.shape}")
    pred = p >= threshold
    per_label = (pred == (t != 0)).mean(axis=0)
    return float(per_label.mean())


@dataclass
class AucTable:
    """Condition -> AUC rows in the fixed condition order, with published
    reference scores carried for side-by-side comparison."""

    rows: list  # [(condition, auc), ...]
    reference: dict

    def to_text(self) -> str:
        if not self.rows:
            return "(no AUC rows)\n"
        width = max(len(name) for name, _ in self.rows)
        lines = [f"{'Condition':<{width}}  AUC"]
        for name, auc in self.rows:
            value = "n/a" if auc is None else f"{auc:.3f}"
            lines.append(f"{name:<{width}}  {value}")
        lines.append("")
        lines.append("Reference scores for comparison:")
        for name, _ in self.rows:
            ref = self.reference.get(name)
            if ref is not None:
                lines.append(f"{name:<{width}}  {ref:.2f}")
        return "\n".join(lines) + "\n"


def auc_table(curves: dict) -> AucTable:
    """Build the per-condition AUC table from {condition: RocCurve|float|None}.

    Row order follows the fixed condition list; conditions absent from
    ``curves`` are omitted, so an empty input gives an empty table.
    """
    rows = []
    for name in CHEST_CONDITIONS:
        if name not in curves:
            continue
        value = curves[name]
        if isinstance(value, RocCurve):
            value = value.auc
        rows.append((name, value))
    for name in curves:
        if name not in CHEST_CONDITIONS:
            raise ValueError(f"unknown condition {name!r}")
    return AucTable(rows, dict(REFERENCE_AUC))
