"""Dataset-affinity detector toolkit (Python bindings)."""

from ._core import (
    Detector,
    ValidationError,
    affinity_histogram,
    analyze,
    average_precision,
    bce_loss,
    ciou_loss,
    evaluate,
    focal_loss,
    prune,
)

__all__ = [
    "Detector",
    "ValidationError",
    "affinity_histogram",
    "analyze",
    "average_precision",
    "bce_loss",
    "ciou_loss",
    "evaluate",
    "focal_loss",
    "prune",
]
