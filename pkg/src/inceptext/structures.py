"""Plain records passed between the detector, geometry and I/O layers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RoiBox:
    """Axis-aligned box in image pixels, with an optional score."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    score: float = 1.0

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"degenerate box {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)

    def as_quad(self) -> np.ndarray:
        return np.array([[self.x_min, self.y_min], [self.x_max, self.y_min],
                         [self.x_max, self.y_max], [self.x_min, self.y_max]], dtype=np.float64)

    @classmethod
    def from_array(cls, a, score: float = 1.0) -> "RoiBox":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]), float(score))


@dataclass
class Detection:
    quad: np.ndarray  # (4, 2), clockwise
    score: float
    mask: np.ndarray  # (k_mask, k_mask) probabilities over the ROI window
    roi: RoiBox = field(repr=False)
