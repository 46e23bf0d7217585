"""Array containers passed between pipeline stages.

Frames and flow fields are row-major 2-D numpy arrays indexed ``[y, x]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError


@dataclass(eq=False)
class FrameBuffer:
    """A single grayscale frame with luminance values in [0, 255]."""

    data: np.ndarray
    index: int = 0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeError(f"frame must be a non-empty 2-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 255.0:
            raise InputError("frame values must be finite and within [0, 255]")
        self.data = data

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(eq=False)
class FlowField:
    """Per-pixel displacement from one frame to another.

    ``vx`` and ``vy`` are float32 planes (the cache format stores f32, so
    keeping the in-memory type identical makes round-trips exact).
    """

    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        vx = np.asarray(self.vx, dtype=np.float32)
        vy = np.asarray(self.vy, dtype=np.float32)
        if vx.ndim != 2 or vx.shape != vy.shape:
            raise ShapeError(f"flow planes must be equal 2-D arrays, got {vx.shape} and {vy.shape}")
        if not (np.all(np.isfinite(vx)) and np.all(np.isfinite(vy))):
            raise InputError("flow contains non-finite values")
        self.vx = vx
        self.vy = vy

    @classmethod
    def zeros(cls, height: int, width: int) -> FlowField:
        return cls(np.zeros((height, width), np.float32), np.zeros((height, width), np.float32))

    @property
    def width(self) -> int:
        return self.vx.shape[1]

    @property
    def height(self) -> int:
        return self.vx.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.vx.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.vx.astype(np.float64), self.vy.astype(np.float64))

    def identical(self, other: FlowField) -> bool:
        """Bit-exact comparison of both planes."""
        return (
            self.shape == other.shape
            and self.vx.tobytes() == other.vx.tobytes()
            and self.vy.tobytes() == other.vy.tobytes()
        )
