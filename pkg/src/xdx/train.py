"""Training and evaluation drivers for the three cascade stages.

Training iterates the train split in seeded minibatches, validates every
epoch, feeds the validation loss to the plateau scheduler, logs one JSON
line per epoch, and writes the final weights.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import engine, metrics, report
from .config import RunConfig
from .data import Manifest, load_and_preprocess, load_manifest
from .engine import Tensor
from .labels import STAGE1_CLASSES
from .metrics import auc_table, confusion_matrix, multilabel_mean_accuracy, roc_curve
from .model import Network, build_network, load_weights, save_weights
from .optim import PlateauScheduler, bce_loss, ce_loss, make_optimizer, scheduler_step
from .rng import SplitMix64


class StageData:
    """Preprocessed images and stage-appropriate targets for one split."""

    def __init__(self, images: np.ndarray, targets):
        self.images = images  # [N, 1, S, S]
        self.targets = targets

    def __len__(self) -> int:
        return self.images.shape[0]


def _stage_targets(records, stage: int, classes) -> object:
    if stage == 1:
        return np.array([1.0 if r.stage1 == "xray" else 0.0 for r in records])
    if stage == 2:
        index = {name: i for i, name in enumerate(classes)}
        for r in records:
            if r.stage2 is None:
                raise ValueError(f"record {r.path!r} lacks a stage-2 label")
            if r.stage2 not in index:
                raise ValueError(f"record {r.path!r} has stage-2 label {r.stage2!r} outside the configured classes")
        return np.array([index[r.stage2] for r in records], dtype=np.int64)
    index = {name: i for i, name in enumerate(classes)}
    hot = np.zeros((len(records), len(classes)))
    for i, r in enumerate(records):
        if r.stage3 is None:
            raise ValueError(f"record {r.path!r} lacks stage-3 labels")
        for cond in r.stage3:
            if cond not in index:
                raise ValueError(f"record {r.path!r} has condition {cond!r} outside the configured classes")
            hot[i, index[cond]] = 1.0
    return hot


def load_stage_data(manifest: Manifest, split: str, stage: int, classes, input_size: int,
                    base_dir) -> StageData:
    records = manifest.by_split(split)
    if not records:
        raise ValueError(f"manifest has no records in split {split!r}; run split first")
    images = np.stack(
        [load_and_preprocess(r.path, target=input_size, base_dir=base_dir).data for r in records]
    )
    return StageData(images, _stage_targets(records, stage, classes))


def _batch_loss(net: Network, images: np.ndarray, targets, stage: int, train: bool) -> Tensor:
    logits = net.forward(Tensor(images), train=train)
    if stage == 1:
        return bce_loss(logits, Tensor(np.asarray(targets).reshape(-1, 1)))
    if stage == 2:
        return ce_loss(logits, list(targets))
    return bce_loss(logits, Tensor(targets))


def _eval_loss(net: Network, ds: StageData, stage: int, batch_size: int) -> float:
    total, count = 0.0, 0
    with engine.no_grad():
        for lo in range(0, len(ds), batch_size):
            hi = min(lo + batch_size, len(ds))
            loss = _batch_loss(net, ds.images[lo:hi], ds.targets[lo:hi], stage, train=False)
            total += loss.item() * (hi - lo)
            count += hi - lo
    return total / count


def train(config: RunConfig, base_dir=None) -> list:
    """Train one stage; returns the per-epoch metrics and writes weights
    plus a JSON-Lines metrics log."""
    manifest = load_manifest(config.manifest)
    if base_dir is None:
        base_dir = Path(config.manifest).parent
    if any(r.split is None for r in manifest.records):
        raise ValueError("manifest has unassigned splits; run split first")

    train_ds = load_stage_data(manifest, "train", config.stage, config.classes,
                               config.spec.input_size, base_dir)
    val_ds = load_stage_data(manifest, "val", config.stage, config.classes,
                             config.spec.input_size, base_dir)

    net = build_network(config.spec, config.seed)
    opt = make_optimizer(config.optimizer, net.parameters(), config.lr,
                         config.beta1, config.beta2, config.eps, config.weight_decay)
    sched = PlateauScheduler(config.scheduler.factor, config.scheduler.patience,
                             config.scheduler.min_lr)

    order_rng = SplitMix64(config.seed ^ 0xD1B54A32D192ED03)
    history = []
    n = len(train_ds)
    for epoch in range(1, config.epochs + 1):
        order = list(range(n))
        order_rng.shuffle(order)
        epoch_loss, seen = 0.0, 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            images = train_ds.images[idx]
            targets = train_ds.targets[idx] if config.stage != 2 else [train_ds.targets[i] for i in idx]
            net.zero_grad()
            loss = _batch_loss(net, images, targets, config.stage, train=True)
            loss.backward()
            opt.step()
            epoch_loss += loss.item() * len(idx)
            seen += len(idx)
        val_loss = _eval_loss(net, val_ds, config.stage, config.batch_size)
        lr_now = scheduler_step(sched, val_loss, opt)
        history.append(
            {"epoch": epoch, "train_loss": epoch_loss / seen, "val_loss": val_loss, "lr": lr_now}
        )

    out_path = Path(config.out_weights)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(net, out_path)
    log_path = Path(config.metrics_log) if config.metrics_log else out_path.with_suffix(".log.jsonl")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text("".join(json.dumps(h) + "\n" for h in history))
    return history


def train_accuracy(net: Network, ds: StageData, stage: int, classes,
                   batch_size: int = 32, threshold: float = 0.5) -> float:
    """Fraction of correct predictions over a dataset (infer mode)."""
    correct, total = 0, 0
    with engine.no_grad():
        for lo in range(0, len(ds), batch_size):
            hi = min(lo + batch_size, len(ds))
            logits = net.forward(Tensor(ds.images[lo:hi]), train=False)
            if stage == 1:
                p = 1.0 / (1.0 + np.exp(-logits.data[:, 0]))
                pred = (p >= threshold).astype(float)
                correct += int((pred == ds.targets[lo:hi]).sum())
            elif stage == 2:
                pred = logits.data.argmax(axis=1)
                correct += int((pred == ds.targets[lo:hi]).sum())
            else:
                p = 1.0 / (1.0 + np.exp(-logits.data))
                pred = p >= threshold
                correct += int((pred == (ds.targets[lo:hi] != 0)).all(axis=1).sum())
            total += hi - lo
    return correct / total


def evaluate(weights_path, manifest_path, stage: int, spec, classes,
             out_dir=None, stage_accuracies=None, base_dir=None,
             threshold: float = 0.5, batch_size: int = 32) -> dict:
    """Evaluate one stage on the manifest's test split.

    Stage 1/2 report accuracy plus the confusion matrix; stage 3 reports
    per-condition ROC/AUC and multi-label accuracy. When three stage
    accuracies are supplied, their product is reported as ``end_to_end``.
    """
    manifest = load_manifest(manifest_path)
    if base_dir is None:
        base_dir = Path(manifest_path).parent
    ds = load_stage_data(manifest, "test", stage, classes, spec.input_size, base_dir)

    net = build_network(spec, 0)
    load_weights(net, weights_path)

    end_to_end = None
    if stage_accuracies is not None:
        a1, a2, a3 = stage_accuracies
        from .cascade import end_to_end_accuracy

        end_to_end = end_to_end_accuracy(a1, a2, a3)

    scores = []
    with engine.no_grad():
        for lo in range(0, len(ds), batch_size):
            hi = min(lo + batch_size, len(ds))
            scores.append(net.forward(Tensor(ds.images[lo:hi]), train=False).data)
    logits = np.concatenate(scores, axis=0)

    if stage in (1, 2):
        if stage == 1:
            p = 1.0 / (1.0 + np.exp(-logits[:, 0]))
            predicted = [STAGE1_CLASSES[0] if v >= threshold else STAGE1_CLASSES[1] for v in p]
            actual = [STAGE1_CLASSES[0] if t == 1.0 else STAGE1_CLASSES[1] for t in ds.targets]
            names = list(STAGE1_CLASSES)
        else:
            predicted = [classes[i] for i in logits.argmax(axis=1)]
            actual = [classes[i] for i in ds.targets]
            names = list(classes)
        cm = confusion_matrix(actual, predicted, names)
        acc = metrics.accuracy(cm)
        payload = {
            "stage": stage,
            "accuracy": acc,
            "confusion": {"class_names": names, "counts": [[int(v) for v in row] for row in cm.counts]},
            "end_to_end": end_to_end,
        }
        if out_dir is not None:
            report.write_classification_report(out_dir, cm, acc, end_to_end, extra={"stage": stage})
        return payload

    probs = 1.0 / (1.0 + np.exp(-logits))
    curves = {}
    for j, name in enumerate(classes):
        labels = (ds.targets[:, j] != 0).astype(int)
        if labels.min() == labels.max():
            curves[name] = None  # single-class column: AUC undefined
        else:
            curves[name] = roc_curve(probs[:, j], labels)
    table = auc_table({n: (c.auc if c is not None else None) for n, c in curves.items()})
    mean_acc = multilabel_mean_accuracy(probs, ds.targets, threshold)
    payload = {
        "stage": 3,
        "multilabel_mean_accuracy": mean_acc,
        "auc": {name: (c.auc if c is not None else None) for name, c in curves.items()},
        "end_to_end": end_to_end,
    }
    if out_dir is not None:
        report.write_multilabel_report(out_dir, curves, table, mean_acc, end_to_end,
                                       extra={"stage": 3})
    return payload
