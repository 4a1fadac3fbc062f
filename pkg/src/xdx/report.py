"""Evaluation report rendering: JSON, aligned text tables, CSV exports,
and matplotlib figures written next to them.

Figures always render through the Agg canvas so report generation works
headless.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .labels import REFERENCE_AUC
from .metrics import AucTable, ConfusionMatrix, RocCurve


def confusion_text(cm: ConfusionMatrix) -> str:
    """Aligned table, rows actual and columns predicted."""
    names = cm.class_names
    width = max(max(len(n) for n in names), 6) + 2
    cell = max(max(len(str(int(v))) for v in cm.counts.reshape(-1)), 5) + 2
    lines = ["confusion matrix (rows = actual, columns = predicted)"]
    header = " " * width + "".join(f"{n:>{max(cell, len(n) + 2)}}" for n in names)
    lines.append(header)
    for i, name in enumerate(names):
        row = f"{name:<{width}}" + "".join(
            f"{int(v):>{max(cell, len(names[j]) + 2)}}" for j, v in enumerate(cm.counts[i])
        )
        lines.append(row)
    return "\n".join(lines) + "\n"


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["actual\\predicted"] + list(cm.class_names))
        for name, row in zip(cm.class_names, cm.counts):
            writer.writerow([name] + [int(v) for v in row])


def write_roc_csv(curves: dict, path) -> None:
    """All ROC points in one delimited file: condition, fpr, tpr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "fpr", "tpr"])
        for name, curve in curves.items():
            if curve is None:
                continue
            for fpr, tpr in curve.points:
                writer.writerow([name, f"{fpr:.10g}", f"{tpr:.10g}"])


def plot_confusion(cm: ConfusionMatrix, path) -> None:
    n = len(cm.class_names)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * n + 2), max(3.5, 0.6 * n + 1.5)))
    ax.imshow(cm.counts, cmap="Blues")
    ax.set_xticks(range(n), cm.class_names, rotation=45, ha="right")
    ax.set_yticks(range(n), cm.class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("actual")
    peak = cm.counts.max() if cm.counts.size else 0
    for i in range(n):
        for j in range(n):
            v = int(cm.counts[i, j])
            ax.text(j, i, str(v), ha="center", va="center",
                    color="white" if peak and v > peak / 2 else "black", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_roc_curves(curves: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    for name, curve in curves.items():
        if curve is None:
            continue
        xs = [p[0] for p in curve.points]
        ys = [p[1] for p in curve.points]
        ax.plot(xs, ys, lw=1.2, label=f"{name} ({curve.auc:.2f})")
    ax.plot([0, 1], [0, 1], "k--", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("per-condition ROC")
    ax.legend(fontsize=7, loc="lower right", ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_auc_bars(table: AucTable, path) -> None:
    names = [name for name, _ in table.rows]
    values = [auc if auc is not None else 0.0 for _, auc in table.rows]
    refs = [table.reference.get(name) for name in names]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(6.0, 0.55 * len(names) + 2), 4.5))
    ax.bar(x - 0.2, values, width=0.4, label="measured")
    ax.bar(x + 0.2, [r if r is not None else 0.0 for r in refs], width=0.4, label="reference")
    ax.set_xticks(x, names, rotation=45, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("AUC")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_classification_report(out_dir, cm: ConfusionMatrix, acc: float,
                                end_to_end: float | None, extra: dict | None = None) -> dict:
    """Stage 1/2 report bundle: JSON + text + CSV + confusion figure.

    Returns the JSON-ready dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "accuracy": acc,
        "confusion": {
            "class_names": list(cm.class_names),
            "counts": [[int(v) for v in row] for row in cm.counts],
        },
        "end_to_end": end_to_end,
    }
    if extra:
        payload.update(extra)
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    text = confusion_text(cm) + f"\naccuracy: {acc:.5f}\n"
    if end_to_end is not None:
        text += f"end-to-end accuracy: {end_to_end:.5f}\n"
    (out / "report.txt").write_text(text)
    write_confusion_csv(cm, out / "confusion_matrix.csv")
    plot_confusion(cm, out / "confusion_matrix.png")
    return payload


def write_multilabel_report(out_dir, curves: dict, table: AucTable, mean_acc: float,
                            end_to_end: float | None, extra: dict | None = None) -> dict:
    """Stage 3 report bundle: JSON + text + ROC CSV + two figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "multilabel_mean_accuracy": mean_acc,
        "auc": {name: (auc if auc is not None else None) for name, auc in table.rows},
        "reference_auc": dict(REFERENCE_AUC),
        "end_to_end": end_to_end,
    }
    if extra:
        payload.update(extra)
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    text = table.to_text() + f"\nmultilabel mean accuracy: {mean_acc:.5f}\n"
    if end_to_end is not None:
        text += f"end-to-end accuracy: {end_to_end:.5f}\n"
    (out / "report.txt").write_text(text)
    write_roc_csv(curves, out / "roc_points.csv")
    plot_roc_curves(curves, out / "roc_curves.png")
    plot_auc_bars(table, out / "auc_scores.png")
    return payload
