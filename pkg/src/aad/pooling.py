"""Block reduction of dense flow: 2×2 mean pooling, then 2×2 max-magnitude pooling.

Each output cell summarises a 4×4 pixel footprint. Trailing rows or columns
that do not fill a 2×2 block are dropped at each stage.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .fields import FlowField

__all__ = ["BlockFlowGrid", "average_pool_2x2", "max_pool_2x2", "pool_flow", "CELL_SIZE"]

CELL_SIZE = 4


@dataclass(eq=False)
class BlockFlowGrid:
    """Per-cell representative flow vector, shape ``(grid_h, grid_w)``."""

    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        self.vx = np.asarray(self.vx, dtype=np.float64)
        self.vy = np.asarray(self.vy, dtype=np.float64)
        if self.vx.ndim != 2 or self.vx.shape != self.vy.shape:
            raise ShapeError(f"block planes must be equal 2-D arrays, got {self.vx.shape}, {self.vy.shape}")

    @property
    def grid_w(self) -> int:
        return self.vx.shape[1]

    @property
    def grid_h(self) -> int:
        return self.vx.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.vx.shape

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.vx, self.vy)

    def channels(self) -> np.ndarray:
        """Observations stacked in StatsGrid channel order: vx, vy, magnitude."""
        return np.stack([self.vx, self.vy, self.magnitude])


def _blocks(plane: np.ndarray) -> np.ndarray:
    """View a plane as ``(h//2, w//2, 4)`` with the 2×2 block in row-major order."""
    h, w = plane.shape
    h2, w2 = h // 2, w // 2
    trimmed = plane[: 2 * h2, : 2 * w2]
    return trimmed.reshape(h2, 2, w2, 2).transpose(0, 2, 1, 3).reshape(h2, w2, 4)


def _check(flow: FlowField):
    if flow.width < 2 or flow.height < 2:
        raise ShapeError(f"pooling needs at least 2x2 input, got {flow.width}x{flow.height}")


def average_pool_2x2(flow: FlowField) -> FlowField:
    """Mean of each non-overlapping 2×2 block, for vx and vy independently."""
    _check(flow)
    vx = _blocks(flow.vx.astype(np.float64)).mean(axis=2)
    vy = _blocks(flow.vy.astype(np.float64)).mean(axis=2)
    return FlowField(vx, vy)


def max_pool_2x2(flow: FlowField) -> BlockFlowGrid:
    """Keep, per 2×2 block, the whole vector with the largest magnitude.

    Ties go to the first element in row-major order.
    """
    _check(flow)
    bx = _blocks(flow.vx.astype(np.float64))
    by = _blocks(flow.vy.astype(np.float64))
    pick = np.argmax(np.hypot(bx, by), axis=2)[..., None]
    return BlockFlowGrid(
        np.take_along_axis(bx, pick, axis=2)[..., 0],
        np.take_along_axis(by, pick, axis=2)[..., 0],
    )


def pool_flow(flow: FlowField) -> BlockFlowGrid:
    return max_pool_2x2(average_pool_2x2(flow))
