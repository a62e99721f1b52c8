"""Box overlap and distance measures used for attack feedback and scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import BoundingBox, ContractViolation


@dataclass(frozen=True)
class IoUScores:
    """Spatial and temporal overlap of one prediction, plus their fusion."""

    spatial: float
    temporal: float
    fused: float

    def __post_init__(self) -> None:
        for name in ("spatial", "temporal", "fused"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractViolation(f"{name} IoU must lie in [0, 1], got {v}")

    def to_dict(self) -> dict:
        return {"spatial": self.spatial, "temporal": self.temporal, "fused": self.fused}

    @classmethod
    def from_dict(cls, d: dict) -> "IoUScores":
        return cls(spatial=d["spatial"], temporal=d["temporal"], fused=d["fused"])


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when they are disjoint.

    Boxes touching only along an edge or corner have zero intersection
    area and therefore IoU 0.
    """
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def fused_score(
    pred: BoundingBox,
    spatial_ref: BoundingBox,
    temporal_ref: BoundingBox,
    spatial_weight: float,
) -> IoUScores:
    """Score a prediction against the clean current box and the clean previous box.

    The spatial term compares against the tracker's clean prediction for
    the same frame; the temporal term compares against its clean
    prediction for the previous frame. The fused value is their convex
    combination under ``spatial_weight``.
    """
    if not 0.0 <= spatial_weight <= 1.0:
        raise ContractViolation(f"spatial_weight must lie in [0, 1], got {spatial_weight}")
    s = iou(pred, spatial_ref)
    t = iou(pred, temporal_ref)
    return IoUScores(spatial=s, temporal=t, fused=spatial_weight * s + (1.0 - spatial_weight) * t)


def center_error(a: BoundingBox, b: BoundingBox) -> float:
    """Euclidean distance between box centers, in pixels."""
    return math.hypot(a.cx - b.cx, a.cy - b.cy)
