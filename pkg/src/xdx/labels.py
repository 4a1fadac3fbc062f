"""Canonical label vocabularies for the three cascade stages."""

from __future__ import annotations

STAGE1_CLASSES = ("xray", "other")

# The 14 radiograph types the type classifier distinguishes.
XRAY_TYPES = (
    "Spine",
    "Elbow",
    "Finger",
    "Forearm",
    "Hand",
    "Wrist",
    "Knee",
    "Foot",
    "Ankle",
    "Hip",
    "Humerus",
    "Shoulder",
    "Dental",
    "Chest",
)

# The 14 chest conditions scored by the abnormality classifier, in the
# fixed order used by every report and table.
CHEST_CONDITIONS = (
    "Atelectasis",
    "Cardiomegaly",
    "Effusion",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pneumonia",
    "Pneumothorax",
    "Consolidation",
    "Edema",
    "Emphysema",
    "Fibrosis",
    "Pleural Thickening",
    "Hernia",
)

# Published per-condition AUC scores rendered in report footers for
# side-by-side comparison with locally measured values.
REFERENCE_AUC = {
    "Atelectasis": 0.81,
    "Cardiomegaly": 0.91,
    "Effusion": 0.87,
    "Infiltration": 0.72,
    "Mass": 0.85,
    "Nodule": 0.78,
    "Pneumonia": 0.74,
    "Pneumothorax": 0.90,
    "Consolidation": 0.79,
    "Edema": 0.91,
    "Emphysema": 0.92,
    "Fibrosis": 0.81,
    "Pleural Thickening": 0.79,
    "Hernia": 0.99,
}


def canonical_type(token: str) -> str:
    """Map a case-insensitive type token to its canonical name."""
    for name in XRAY_TYPES:
        if token.lower() == name.lower():
            return name
    raise ValueError(f"unknown X-ray type {token!r}")


def canonical_condition(token: str) -> str:
    """Map a case-insensitive condition token to its canonical name."""
    for name in CHEST_CONDITIONS:
        if token.lower() == name.lower():
            return name
    raise ValueError(f"unknown chest condition {token!r}")
