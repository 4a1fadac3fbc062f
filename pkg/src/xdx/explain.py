"""Gradient-weighted class activation maps.

The class logit's gradient with respect to the last convolutional feature
maps is spatially averaged into per-channel weights; the weighted sum of
the forward activation maps passes through a ReLU and is max-normalized
into a coarse [0,1] heatmap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import engine, imaging
from .engine import Tensor
from .model import Network


@dataclass
class Heatmap:
    width: int
    height: int
    values: np.ndarray  # [height, width], in [0,1]
    target_class: str
    raw_max: float  # pre-normalization maximum; 0 iff all values are 0

    def to_json_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "values": [float(v) for v in self.values.reshape(-1)],
        }

    def to_pgm_bytes(self) -> bytes:
        img = np.clip(np.floor(self.values * 255.0 + 0.5), 0, 255).astype(np.uint8)
        return imaging.write_pgm_bytes(img)


def cam_from_activations(activations: np.ndarray, gradients: np.ndarray, target_class: str) -> Heatmap:
    """Combine feature maps [C,h,w] with their logit gradients into a heatmap."""
    if activations.shape != gradients.shape or activations.ndim != 3:
        raise ValueError(
            f"activations {activations.shape} and gradients {gradients.shape} must be matching [C,h,w]"
        )
    alpha = gradients.mean(axis=(1, 2))
    combined = np.tensordot(alpha, activations, axes=(0, 0))
    rectified = np.maximum(combined, 0.0)
    raw_max = float(rectified.max())
    values = rectified / raw_max if raw_max > 0.0 else np.zeros_like(rectified)
    h, w = values.shape
    return Heatmap(width=w, height=h, values=values, target_class=target_class, raw_max=raw_max)


def grad_cam(net: Network, image: Tensor, class_index: int, class_name: str | None = None,
             layer: str = "features") -> Heatmap:
    """Heatmap for one class of a single [1,H,W] image.

    Gradients are taken with respect to the captured feature maps only;
    network parameters are excluded from the graph and left untouched.
    """
    units = net.spec.head.units
    if not 0 <= class_index < units:
        raise IndexError(f"class index {class_index} out of range for {units} logits")
    if image.ndim != 3:
        raise ValueError(f"grad_cam expects a single [1,H,W] image, got shape {tuple(image.shape)}")
    logits, captured = net.forward_with_capture(image, layer)
    target = engine.pick(logits, class_index)
    target.backward()
    acts = captured.data[0]
    grads = captured.grad[0]
    name = class_name if class_name is not None else str(class_index)
    return cam_from_activations(acts, grads, name)


def upsample_heatmap(h: Heatmap, target: int = 224) -> np.ndarray:
    """Bilinear upsample to [target, target]; values stay within [0,1]."""
    if target < h.width or target < h.height:
        raise ValueError(f"target {target} smaller than heatmap {h.height}x{h.width}")
    return imaging.bilinear_resize(h.values, target, target)
