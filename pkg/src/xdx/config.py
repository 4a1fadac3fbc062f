"""Run and service configuration: JSON files with per-stage defaults.

Stage heads are enforced at load: stage 1 is a single-logit sigmoid gate,
stage 2 a softmax over the type vocabulary, stage 3 independent sigmoids
over the condition vocabulary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .labels import CHEST_CONDITIONS, XRAY_TYPES
from .model import Head, NetworkSpec, PRESETS, spec_from_preset

STAGE_HEAD_KINDS = {1: "binary_sigmoid", 2: "softmax", 3: "multilabel_sigmoid"}

STAGE_DEFAULTS = {
    1: {"optimizer": "adam", "lr": 1e-3, "weight_decay": 1e-5, "epochs": 10},
    2: {"optimizer": "adam", "lr": 1e-3, "weight_decay": 1e-5, "epochs": 10},
    3: {"optimizer": "radam", "lr": 1e-4, "weight_decay": 3e-4, "epochs": 15},
}


def parse_spec(obj: dict, head: Head) -> NetworkSpec:
    """Build a NetworkSpec from either {"preset": name, ...} or an inline
    description; the head is stage-determined and may not be overridden."""
    if "preset" in obj:
        return spec_from_preset(obj["preset"], head, obj.get("input_size"))
    if "head" in obj:
        raise ValueError("spec head is stage-determined; remove the 'head' key")
    try:
        return NetworkSpec(
            init_channels=int(obj["init_channels"]),
            growth_rate=int(obj["growth_rate"]),
            block_sizes=tuple(int(b) for b in obj["block_sizes"]),
            head=head,
            input_size=int(obj.get("input_size", 224)),
        )
    except KeyError as exc:
        raise ValueError(f"spec is missing required key {exc}") from exc


def default_classes(stage: int) -> tuple:
    if stage == 2:
        return XRAY_TYPES
    if stage == 3:
        return CHEST_CONDITIONS
    return ("xray", "other")


@dataclass
class SchedulerSettings:
    factor: float = 0.1
    patience: int = 3
    min_lr: float = 0.0


@dataclass
class RunConfig:
    stage: int
    spec: NetworkSpec
    classes: tuple
    optimizer: str
    lr: float
    beta1: float
    beta2: float
    eps: float
    weight_decay: float
    epochs: int
    batch_size: int
    seed: int
    manifest: str
    out_weights: str
    metrics_log: Optional[str] = None
    scheduler: SchedulerSettings = field(default_factory=SchedulerSettings)

    @staticmethod
    def from_dict(obj: dict) -> "RunConfig":
        stage = int(obj.get("stage", 0))
        if stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2, or 3, got {obj.get('stage')!r}")
        defaults = STAGE_DEFAULTS[stage]
        classes = tuple(obj.get("classes", default_classes(stage)))
        units = 1 if stage == 1 else len(classes)
        head = Head(STAGE_HEAD_KINDS[stage], units)
        spec = parse_spec(obj.get("spec", {"preset": "densenet121"}), head)
        sched = obj.get("scheduler", {})
        for key in ("manifest", "out_weights"):
            if key not in obj:
                raise ValueError(f"config is missing required key {key!r}")
        return RunConfig(
            stage=stage,
            spec=spec,
            classes=classes,
            optimizer=str(obj.get("optimizer", defaults["optimizer"])),
            lr=float(obj.get("lr", defaults["lr"])),
            beta1=float(obj.get("beta1", 0.9)),
            beta2=float(obj.get("beta2", 0.999)),
            eps=float(obj.get("eps", 1e-8)),
            weight_decay=float(obj.get("weight_decay", defaults["weight_decay"])),
            epochs=int(obj.get("epochs", defaults["epochs"])),
            batch_size=int(obj.get("batch_size", 16)),
            seed=int(obj.get("seed", 0)),
            manifest=str(obj["manifest"]),
            out_weights=str(obj["out_weights"]),
            metrics_log=obj.get("metrics_log"),
            scheduler=SchedulerSettings(
                factor=float(sched.get("factor", 0.1)),
                patience=int(sched.get("patience", 3)),
                min_lr=float(sched.get("min_lr", 0.0)),
            ),
        )

    @staticmethod
    def load(path, overrides: Optional[dict] = None) -> "RunConfig":
        """Read a JSON config file; ``overrides`` (CLI flags) win on conflict."""
        obj = json.loads(Path(path).read_text())
        if not isinstance(obj, dict):
            raise ValueError("run config must be a JSON object")
        if overrides:
            obj.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(obj)


@dataclass
class StageModelConfig:
    spec_obj: dict
    weights: str
    classes: tuple


@dataclass
class ServiceConfig:
    stage1: StageModelConfig
    stage2: StageModelConfig
    stage3: StageModelConfig
    input_size: int = 224
    stage1_threshold: float = 0.5
    stage3_threshold: float = 0.5
    explain: str = "none"
    port: int = 8080
    body_limit: int = 8 * 1024 * 1024

    @staticmethod
    def from_dict(obj: dict) -> "ServiceConfig":
        stages = {}
        for idx, default_cls in ((1, ("xray", "other")), (2, XRAY_TYPES), (3, CHEST_CONDITIONS)):
            key = f"stage{idx}"
            if key not in obj:
                raise ValueError(f"service config is missing {key!r}")
            entry = obj[key]
            if "weights" not in entry:
                raise ValueError(f"{key} entry needs a 'weights' path")
            spec_obj = entry.get("spec", {"preset": "densenet121"})
            stages[key] = StageModelConfig(
                spec_obj=spec_obj,
                weights=str(entry["weights"]),
                classes=tuple(entry.get("classes", default_cls)),
            )
        return ServiceConfig(
            stage1=stages["stage1"],
            stage2=stages["stage2"],
            stage3=stages["stage3"],
            input_size=int(obj.get("input_size", 224)),
            stage1_threshold=float(obj.get("stage1_threshold", 0.5)),
            stage3_threshold=float(obj.get("stage3_threshold", 0.5)),
            explain=str(obj.get("explain", "none")),
            port=int(obj.get("port", 8080)),
            body_limit=int(obj.get("body_limit", 8 * 1024 * 1024)),
        )

    @staticmethod
    def load(path, overrides: Optional[dict] = None) -> "ServiceConfig":
        obj = json.loads(Path(path).read_text())
        if not isinstance(obj, dict):
            raise ValueError("service config must be a JSON object")
        if overrides:
            obj.update({k: v for k, v in overrides.items() if v is not None})
        return ServiceConfig.from_dict(obj)
