"""Staged routing: gate, type classification, chest abnormality scoring,
and optional per-condition explanation.

Stage 2 runs only when stage 1 accepts the image as a radiograph; stage 3
runs only when stage 2 routes to Chest (the one type with an abnormality
model). Routing is a pure function of the stage outputs and thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import engine, explain
from .data import preprocess
from .engine import Tensor
from .labels import CHEST_CONDITIONS, XRAY_TYPES
from .model import Network

NOTE_NOT_XRAY = "not an X-ray"
NOTE_NO_MODEL = "no abnormality model for this type"

EXPLAIN_MODES = ("none", "positives", "all")


@dataclass
class CascadeConfig:
    stage1_threshold: float = 0.5
    stage3_threshold: float = 0.5
    explain_classes: str = "none"  # none | positives | all
    stage1_weights: Optional[str] = None
    stage2_weights: Optional[str] = None
    stage3_weights: Optional[str] = None

    def __post_init__(self):
        for name, value in (
            ("stage1_threshold", self.stage1_threshold),
            ("stage3_threshold", self.stage3_threshold),
        ):
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0,1), got {value}")
        if self.explain_classes not in EXPLAIN_MODES:
            raise ValueError(f"explain_classes must be one of {EXPLAIN_MODES}")


@dataclass
class CascadeModels:
    stage1: Network
    stage2: Network
    stage3: Network
    stage2_classes: tuple = XRAY_TYPES
    stage3_classes: tuple = CHEST_CONDITIONS
    input_size: int = 224


@dataclass
class CascadeReport:
    stage1: dict  # {"is_xray": bool, "p_xray": float}
    stage2: Optional[dict] = None  # {"type": str, "probs": {name: float}}
    stage3: Optional[dict] = None  # {"probs": {name: float}, "positive": [str]}
    explanations: Optional[dict] = None  # {name: Heatmap}
    notes: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "stage1": self.stage1,
            "stage2": self.stage2,
            "stage3": self.stage3,
            "explanations": (
                {name: hm.to_json_dict() for name, hm in self.explanations.items()}
                if self.explanations is not None
                else None
            ),
            "notes": list(self.notes),
        }


def route(
    p_xray: float,
    type_probs: Optional[Sequence[float]],
    cond_probs: Optional[Sequence[float]],
    config: CascadeConfig,
    type_names: Sequence[str] = XRAY_TYPES,
    cond_names: Sequence[str] = CHEST_CONDITIONS,
) -> CascadeReport:
    """Assemble a report from raw stage outputs; pure routing logic.

    ``type_probs`` is consulted only when the gate accepts; ``cond_probs``
    only when the type is Chest.
    """
    is_xray = p_xray >= config.stage1_threshold
    report = CascadeReport(stage1={"is_xray": bool(is_xray), "p_xray": float(p_xray)})
    if not is_xray:
        report.notes.append(NOTE_NOT_XRAY)
        return report

    probs = np.asarray(type_probs, dtype=np.float64)
    winner = type_names[int(np.argmax(probs))]
    report.stage2 = {
        "type": winner,
        "probs": {name: float(p) for name, p in zip(type_names, probs)},
    }
    if winner != "Chest":
        report.notes.append(NOTE_NO_MODEL)
        return report

    cond = np.asarray(cond_probs, dtype=np.float64)
    positive = [name for name, p in zip(cond_names, cond) if p >= config.stage3_threshold]
    report.stage3 = {
        "probs": {name: float(p) for name, p in zip(cond_names, cond)},
        "positive": positive,
    }
    return report


def run_cascade(
    image: np.ndarray,
    models: CascadeModels,
    config: CascadeConfig,
    explain_request: Optional[str] = None,
) -> CascadeReport:
    """Preprocess, gate, type-route, score, and optionally explain one image.

    ``explain_request`` overrides the configured explanation policy for
    this call: a condition name or "all".
    """
    x = preprocess(image, target=models.input_size)
    with engine.no_grad():
        p_xray = float(engine.sigmoid(models.stage1.forward(x)).data[0])
        type_probs = None
        cond_probs = None
        if p_xray >= config.stage1_threshold:
            type_probs = engine.softmax(models.stage2.forward(x)).data
            if models.stage2_classes[int(np.argmax(type_probs))] == "Chest":
                cond_probs = engine.sigmoid(models.stage3.forward(x)).data

    report = route(p_xray, type_probs, cond_probs, config, models.stage2_classes, models.stage3_classes)

    if report.stage3 is not None:
        wanted = _explanation_targets(report, config, explain_request, models.stage3_classes)
        if wanted:
            report.explanations = {}
            for name in wanted:
                idx = models.stage3_classes.index(name)
                report.explanations[name] = explain.grad_cam(models.stage3, x, idx, class_name=name)
    return report


def _explanation_targets(report, config, explain_request, cond_names) -> list:
    if explain_request is not None:
        if explain_request == "all":
            return list(cond_names)
        if explain_request not in cond_names:
            raise ValueError(f"unknown condition {explain_request!r} for explanation")
        return [explain_request]
    if config.explain_classes == "all":
        return list(cond_names)
    if config.explain_classes == "positives":
        return list(report.stage3["positive"])
    return []


def end_to_end_accuracy(acc1: float, acc2: float, acc3: float) -> float:
    """Composed accuracy of the full pipeline: the product of the three
    stage accuracies."""
    for name, a in (("acc1", acc1), ("acc2", acc2), ("acc3", acc3)):
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"{name} must lie in [0,1], got {a}")
    return acc1 * acc2 * acc3
