"""Deterministic synthetic corpora: geometric patterns per class.

Every pipeline stage is exercisable without any external dataset. Images
are 8-bit PGM; labels use the canonical vocabularies. Patterns are crisp
(disk, cross, stripes, ...) with seeded jitter and mild noise so toy
networks separate them quickly.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import imaging
from .data import Manifest, SampleRecord, save_manifest
from .labels import CHEST_CONDITIONS
from .rng import SplitMix64

BACKGROUND = 40
FOREGROUND = 215

# Pattern painters keyed by name; each draws onto a float canvas.


def _disk(canvas, cx, cy, size):
    r = size / 3.5
    yy, xx = np.mgrid[0:size, 0:size]
    canvas[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = FOREGROUND


def _cross(canvas, cx, cy, size):
    t = max(2, size // 10)
    canvas[cy - t : cy + t, :] = FOREGROUND
    canvas[:, cx - t : cx + t] = FOREGROUND


def _stripes(canvas, cx, cy, size):
    period = max(4, size // 6)
    for y in range(0, size, period):
        canvas[y : y + period // 2, :] = FOREGROUND


def _frame(canvas, cx, cy, size):
    t = max(2, size // 8)
    canvas[:t, :] = FOREGROUND
    canvas[-t:, :] = FOREGROUND
    canvas[:, :t] = FOREGROUND
    canvas[:, -t:] = FOREGROUND


def _checker(canvas, cx, cy, size):
    cell = max(4, size // 4)
    yy, xx = np.mgrid[0:size, 0:size]
    canvas[((yy // cell) + (xx // cell)) % 2 == 0] = FOREGROUND


PATTERNS = [_disk, _cross, _stripes, _frame, _checker]


def _render(pattern_index: int, size: int, rng: SplitMix64) -> np.ndarray:
    canvas = np.full((size, size), float(BACKGROUND))
    jitter = size // 8
    cx = size // 2 + int(rng.below(2 * jitter + 1)) - jitter
    cy = size // 2 + int(rng.below(2 * jitter + 1)) - jitter
    PATTERNS[pattern_index % len(PATTERNS)](canvas, cx, cy, size)
    noise = (rng.uniform_array(size * size).reshape(size, size) - 0.5) * 20.0
    return np.clip(canvas + noise, 0, 255).astype(np.uint8)


def _render_noise(size: int, rng: SplitMix64) -> np.ndarray:
    """Unstructured filler standing in for non-radiograph photographs."""
    base = rng.uniform_array(size * size).reshape(size, size) * 255.0
    ramp = np.linspace(0, 60, size)[None, :] * (1 if rng.below(2) else -1)
    return np.clip(base * 0.5 + 80 + ramp, 0, 255).astype(np.uint8)


def stage2_corpus(out_dir, classes, per_class: int, size: int = 32, seed: int = 0) -> Path:
    """Type-classification corpus: one geometric pattern per type name.

    Writes PGMs plus manifest.jsonl; returns the manifest path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = SplitMix64(seed)
    records = []
    for ci, cls in enumerate(classes):
        for i in range(per_class):
            name = f"{cls.lower().replace(' ', '_')}_{i:04d}.pgm"
            imaging.write_pgm(out / name, _render(ci, size, rng))
            records.append(SampleRecord(name, "xray", cls))
    manifest = Manifest(records, provenance=f"synthetic stage-2 corpus seed={seed}")
    mpath = out / "manifest.jsonl"
    save_manifest(manifest, mpath)
    return mpath


def stage1_corpus(out_dir, per_class: int, size: int = 32, seed: int = 0) -> Path:
    """Gate corpus: patterned radiograph stand-ins vs noise images."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = SplitMix64(seed)
    records = []
    for i in range(per_class):
        name = f"xray_{i:04d}.pgm"
        imaging.write_pgm(out / name, _render(i % len(PATTERNS), size, rng))
        records.append(SampleRecord(name, "xray"))
    for i in range(per_class):
        name = f"other_{i:04d}.pgm"
        imaging.write_pgm(out / name, _render_noise(size, rng))
        records.append(SampleRecord(name, "other"))
    manifest = Manifest(records, provenance=f"synthetic stage-1 corpus seed={seed}")
    mpath = out / "manifest.jsonl"
    save_manifest(manifest, mpath)
    return mpath


def stage3_corpus(out_dir, conditions=None, per_combo: int = 4, size: int = 32, seed: int = 0) -> Path:
    """Multi-label chest corpus: each active condition adds one localized
    blob; the label set records exactly what was drawn."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    conditions = list(conditions if conditions is not None else CHEST_CONDITIONS[:4])
    rng = SplitMix64(seed)
    records = []
    count = 0
    for mask in range(2 ** len(conditions)):
        active = tuple(c for bit, c in enumerate(conditions) if mask >> bit & 1)
        for _ in range(per_combo):
            canvas = np.full((size, size), float(BACKGROUND))
            for bit, cond in enumerate(conditions):
                if mask >> bit & 1:
                    # fixed quadrant per condition, jittered blob
                    qy, qx = divmod(bit % 4, 2)
                    cy = size // 4 + qy * size // 2 + int(rng.below(5)) - 2
                    cx = size // 4 + qx * size // 2 + int(rng.below(5)) - 2
                    r = size // 8
                    yy, xx = np.mgrid[0:size, 0:size]
                    canvas[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = FOREGROUND
            noise = (rng.uniform_array(size * size).reshape(size, size) - 0.5) * 16.0
            img = np.clip(canvas + noise, 0, 255).astype(np.uint8)
            name = f"chest_{count:05d}.pgm"
            imaging.write_pgm(out / name, img)
            records.append(SampleRecord(name, "xray", "Chest", active))
            count += 1
    manifest = Manifest(records, provenance=f"synthetic stage-3 corpus seed={seed}")
    mpath = out / "manifest.jsonl"
    save_manifest(manifest, mpath)
    return mpath
