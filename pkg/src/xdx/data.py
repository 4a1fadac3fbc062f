"""Manifest ingestion, deterministic splitting, stage-1 balancing, and
image preprocessing.

Manifests are JSON Lines: one record per line with keys ``path``,
``stage1``, optional ``stage2``, optional ``stage3`` (array), optional
``split``. All seeded decisions run on splitmix64 so two implementations
of this format agree bit-for-bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import imaging
from .engine import Tensor
from .labels import XRAY_TYPES, canonical_condition, canonical_type
from .rng import SplitMix64

SPLITS = ("train", "val", "test")

# Grayscale normalization applied after scaling to [0,1]; recorded here so
# every experiment is self-describing.
NORM_MEAN = 0.449
NORM_STD = 0.226


@dataclass(frozen=True)
class SampleRecord:
    path: str
    stage1: str  # "xray" | "other"
    stage2: Optional[str] = None  # canonical type name
    stage3: Optional[tuple] = None  # subset of conditions; () means "no finding"
    split: Optional[str] = None

    def validate(self) -> None:
        if self.stage1 not in ("xray", "other"):
            raise ValueError(f"stage1 must be 'xray' or 'other', got {self.stage1!r}")
        if self.stage2 is not None and self.stage1 != "xray":
            raise ValueError(
                f"record {self.path!r} violates: stage2 label present requires stage1 = xray"
            )
        if self.stage3 is not None and self.stage2 != "Chest":
            raise ValueError(
                f"record {self.path!r} violates: stage3 labels present require stage2 = Chest"
            )
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"unknown split token {self.split!r}")


@dataclass
class Manifest:
    records: list
    provenance: str = ""

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.path in seen:
                raise ValueError(f"duplicate path in manifest: {r.path!r}")
            seen.add(r.path)

    def __len__(self) -> int:
        return len(self.records)

    def by_split(self, split: str) -> list:
        return [r for r in self.records if r.split == split]


def _record_from_json(obj: dict, lineno: int) -> SampleRecord:
    try:
        path = obj["path"]
        stage1 = obj["stage1"]
        if not isinstance(path, str) or not path:
            raise ValueError("path must be a nonempty string")
        if stage1 not in ("xray", "other"):
            raise ValueError(f"unknown stage1 token {stage1!r}")
        stage2 = obj.get("stage2")
        if stage2 is not None:
            stage2 = canonical_type(stage2)
        stage3 = obj.get("stage3")
        if stage3 is not None:
            if not isinstance(stage3, list):
                raise ValueError("stage3 must be an array of condition names")
            stage3 = tuple(canonical_condition(c) for c in stage3)
        split = obj.get("split")
        rec = SampleRecord(path, stage1, stage2, stage3, split)
        rec.validate()
        return rec
    except (KeyError, ValueError) as exc:
        raise ValueError(f"manifest line {lineno}: {exc}") from exc


def load_manifest(path) -> Manifest:
    """Parse a JSON-Lines manifest; malformed lines abort with line number."""
    p = Path(path)
    records = []
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"manifest line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise ValueError(f"manifest line {lineno}: expected a JSON object")
        records.append(_record_from_json(obj, lineno))
    return Manifest(records, provenance=str(p))


def record_to_json(rec: SampleRecord) -> dict:
    obj: dict = {"path": rec.path, "stage1": rec.stage1}
    if rec.stage2 is not None:
        obj["stage2"] = rec.stage2
    if rec.stage3 is not None:
        obj["stage3"] = list(rec.stage3)
    if rec.split is not None:
        obj["split"] = rec.split
    return obj


def save_manifest(manifest: Manifest, path) -> None:
    lines = [json.dumps(record_to_json(r)) for r in manifest.records]
    Path(path).write_text("\n".join(lines) + "\n")


# -- splitting -----------------------------------------------------------------


def _split_sizes(n: int, ratios: Sequence[float]) -> list:
    sizes = [int(math.floor(r * n)) for r in ratios[:-1]]
    sizes.append(n - sum(sizes))
    return sizes


def _allocate_stratified(group_sizes: list, totals: list) -> list:
    """Per-group split counts: rows sum to group sizes, columns sum to the
    global split sizes, and every cell stays within one sample of its
    proportional quota m_g * (n_s / n).

    Start from per-group Hamilton (largest remainder) rounding, then repair
    column sums by moving single samples out of over-quota cells into
    under-quota cells of the same group; with three columns a two-move
    chain always exists, so the loop terminates.
    """
    n = sum(group_sizes)
    k = len(totals)
    quotas = [[m * t / n for t in totals] for m in group_sizes]
    counts = []
    for g, m in enumerate(group_sizes):
        base = [int(math.floor(q)) for q in quotas[g]]
        extras = m - sum(base)
        order = sorted(range(k), key=lambda s: (-(quotas[g][s] - base[s]), s))
        for s in order[:extras]:
            base[s] += 1
        counts.append(base)

    for _ in range(4 * n + 16):
        colsum = [sum(c[s] for c in counts) for s in range(k)]
        over = [s for s in range(k) if colsum[s] > totals[s]]
        if not over:
            break
        a = over[0]
        moved = False
        under = [s for s in range(k) if colsum[s] < totals[s]]
        # Prefer a direct move from an over-quota cell into an under-target,
        # under-quota cell of the same group.
        for b in under:
            for g in range(len(counts)):
                if counts[g][a] > quotas[g][a] and counts[g][b] < quotas[g][b]:
                    counts[g][a] -= 1
                    counts[g][b] += 1
                    moved = True
                    break
            if moved:
                break
        if moved:
            continue
        # Otherwise step through the group's own under-quota column; the
        # next iteration finishes the chain.
        for g in range(len(counts)):
            if counts[g][a] > quotas[g][a]:
                b = min(
                    (s for s in range(k) if s != a and counts[g][s] < quotas[g][s]),
                    key=lambda s: counts[g][s] - quotas[g][s],
                )
                counts[g][a] -= 1
                counts[g][b] += 1
                moved = True
                break
        if not moved:
            raise AssertionError("stratified allocation failed to converge")
    else:
        raise AssertionError("stratified allocation failed to converge")
    return counts


def split_dataset(manifest: Manifest, seed: int, ratios: Sequence[float] = (0.7, 0.2, 0.1)) -> Manifest:
    """Assign train/val/test splits, stratified by stage2 label.

    Global sizes are exactly floor(r0*n), floor(r1*n), and the remainder.
    Records are grouped by stage2 label (records without one form their own
    group), each group is Fisher-Yates shuffled by a single splitmix64
    stream seeded with ``seed``, and per-group counts come from the
    stratified allocator.
    """
    if len(manifest) == 0:
        raise ValueError("cannot split an empty manifest")
    if len(ratios) != 3:
        raise ValueError("ratios must have three entries")
    if any(r < 0 for r in ratios):
        raise ValueError("ratios must be nonnegative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")

    n = len(manifest)
    totals = _split_sizes(n, ratios)

    groups: dict = {}
    for idx, rec in enumerate(manifest.records):
        groups.setdefault(rec.stage2, []).append(idx)
    # Deterministic group order: labeled groups sorted by name, then unlabeled.
    keys = sorted((key for key in groups if key is not None)) + (
        [None] if None in groups else []
    )

    rng = SplitMix64(seed)
    counts = _allocate_stratified([len(groups[key]) for key in keys], totals)

    assigned: dict = {}
    for gi, key in enumerate(keys):
        members = list(groups[key])
        rng.shuffle(members)
        t, v, _ = counts[gi]
        for j, idx in enumerate(members):
            assigned[idx] = SPLITS[0] if j < t else SPLITS[1] if j < t + v else SPLITS[2]

    records = [replace(rec, split=assigned[i]) for i, rec in enumerate(manifest.records)]
    note = f"{manifest.provenance} | split seed={seed} ratios={tuple(ratios)}"
    return Manifest(records, provenance=note)


def balance_stage1(
    xray_records: Sequence[SampleRecord],
    other_records: Sequence[SampleRecord],
    chest_fraction: float = 0.1,
    seed: int = 0,
) -> Manifest:
    """Class-balanced stage-1 manifest.

    Keeps floor(chest_fraction * |chest|) of the chest radiographs (seeded
    choice) plus every non-chest radiograph, then samples exactly the same
    total count of non-radiograph records.
    """
    if not 0 < chest_fraction <= 1:
        raise ValueError(f"chest_fraction must lie in (0, 1], got {chest_fraction}")
    chest = [r for r in xray_records if r.stage2 == "Chest"]
    nonchest = [r for r in xray_records if r.stage2 != "Chest"]
    keep = int(math.floor(chest_fraction * len(chest)))

    rng = SplitMix64(seed)
    chest_idx = list(range(len(chest)))
    rng.shuffle(chest_idx)
    kept_chest = [chest[i] for i in sorted(chest_idx[:keep])]

    xray_side = kept_chest + nonchest
    need = len(xray_side)
    if len(other_records) < need:
        raise ValueError(
            f"insufficient non-radiograph records: need {need}, have {len(other_records)}"
        )
    other_idx = list(range(len(other_records)))
    rng.shuffle(other_idx)
    chosen_other = [other_records[i] for i in sorted(other_idx[:need])]

    note = f"balanced stage-1 set: {need} xray + {need} other (chest_fraction={chest_fraction})"
    return Manifest(xray_side + chosen_other, provenance=note)


# -- preprocessing ------------------------------------------------------------------


def preprocess(image: np.ndarray, target: int = 224) -> Tensor:
    """Decoded 8-bit image -> normalized [1, target, target] tensor.

    RGB collapses to BT.601 luminance, the 8-bit plane is bilinearly
    resized, scaled to [0,1], then standardized with the fixed constants
    (mean 0.449, std 0.226).
    """
    img = np.asarray(image)
    if img.ndim not in (2, 3) or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"cannot preprocess image of shape {img.shape}")
    gray = imaging.to_grayscale(img)
    resized = imaging.bilinear_resize(gray.astype(np.float64), target, target)
    scaled = resized / 255.0
    normalized = (scaled - NORM_MEAN) / NORM_STD
    return Tensor(normalized.reshape(1, target, target))


def load_and_preprocess(path, target: int = 224, base_dir=None) -> Tensor:
    """Read an image file (path optionally relative to ``base_dir``) and
    preprocess it."""
    p = Path(path)
    if base_dir is not None and not p.is_absolute():
        p = Path(base_dir) / p
    return preprocess(imaging.read_image(p), target=target)
