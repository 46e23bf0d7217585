"""k·σ window test per cell, fusion with object flags, frame-level scoring."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError
from .motion_stats import CHANNELS, CellStats, StatsGrid
from .object_map import DetectionRecord, ObjectMap, object_anomaly
from .pooling import CELL_SIZE, BlockFlowGrid

__all__ = [
    "Label",
    "DetectorConfig",
    "AnomalyMap",
    "MotionTerms",
    "classify_cell",
    "motion_terms",
    "detect_frame",
    "cell_flags_from_objects",
    "label_image",
]


class Label(enum.IntEnum):
    NORMAL = 0
    ANOMALOUS = 1
    WARMUP = 2


@dataclass(frozen=True)
class DetectorConfig:
    k: float = 3.0
    warmup: float = 30
    sigma_floor: float = 0.01
    motion_epsilon: float = 0.1
    channel: str = "magnitude"  # one of CHANNELS, or "any" for per-channel OR
    min_cells: int = 1
    use_objects: bool = False
    p_rare: float = 0.05
    min_total: int = 20
    adapt: bool = True

    def __post_init__(self):
        if not self.k > 0:
            raise InputError("k must be positive")
        if self.warmup < 2:
            raise InputError("warmup must be >= 2")
        if self.min_cells < 1:
            raise InputError("min_cells must be >= 1")
        if self.sigma_floor < 0:
            raise InputError("sigma_floor must be non-negative")
        if self.channel not in CHANNELS + ("any",):
            raise InputError(f"channel must be one of {CHANNELS + ('any',)}")

    def channel_indices(self) -> list[int]:
        return list(range(len(CHANNELS))) if self.channel == "any" else [CHANNELS.index(self.channel)]


@dataclass(eq=False)
class AnomalyMap:
    labels: np.ndarray
    frame_score: int
    frame_flag: bool
    max_zscore: float
    warm: bool = False  # at least one cell had completed warmup at detection time
    frame_index: int = -1

    @property
    def anomalous(self) -> np.ndarray:
        return self.labels == Label.ANOMALOUS

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


def classify_cell(stats: CellStats, x: float, cfg: DetectorConfig) -> Label:
    if stats.count < cfg.warmup:
        return Label.WARMUP
    scale = max(math.sqrt(stats.variance), cfg.sigma_floor)
    return Label.ANOMALOUS if abs(x - stats.mean) > cfg.k * scale else Label.NORMAL


@dataclass(eq=False)
class MotionTerms:
    """Everything the k test needs, independent of k.

    ``dev`` and ``scale`` have shape ``(channels, grid_h, grid_w)`` for the
    configured channels; a cell fires at ``k`` when it is ``eligible`` and
    ``dev > k * scale`` on any of them.
    """

    dev: np.ndarray
    scale: np.ndarray
    moving: np.ndarray
    warm: np.ndarray

    @property
    def eligible(self) -> np.ndarray:
        return self.moving & self.warm

    def fires(self, k: float) -> np.ndarray:
        return self.eligible & np.any(self.dev > k * self.scale, axis=0)

    def max_zscore(self) -> float:
        elig = self.eligible
        if not elig.any():
            return 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.scale > 0, self.dev / self.scale, np.where(self.dev > 0, np.inf, 0.0))
        z = z.max(axis=0)
        return float(z[elig].max())


def motion_terms(grid: StatsGrid, blocks: BlockFlowGrid, cfg: DetectorConfig) -> MotionTerms:
    if grid.shape != blocks.shape:
        raise ShapeError(f"stats grid {grid.shape} does not match blocks {blocks.shape}")
    idx = cfg.channel_indices()
    obs = blocks.channels()[idx]
    dev = np.abs(obs - grid.mean[idx])
    scale = np.maximum(np.sqrt(grid.variance[idx]), cfg.sigma_floor)
    warm = grid.count[idx[0]] >= cfg.warmup
    moving = blocks.magnitude > cfg.motion_epsilon
    return MotionTerms(dev, scale, moving, warm)


def _assemble(terms: MotionTerms, k: float, objflags, cfg: DetectorConfig, frame_index=-1) -> AnomalyMap:
    labels = np.full(terms.moving.shape, Label.NORMAL, dtype=np.int8)
    labels[terms.moving & ~terms.warm] = Label.WARMUP
    labels[terms.fires(k)] = Label.ANOMALOUS
    if cfg.use_objects and objflags is not None:
        objflags = np.asarray(objflags, dtype=bool)
        if objflags.shape != labels.shape:
            raise ShapeError(f"object flags {objflags.shape} do not match grid {labels.shape}")
        labels[objflags] = Label.ANOMALOUS
    score = int(np.count_nonzero(labels == Label.ANOMALOUS))
    return AnomalyMap(
        labels=labels,
        frame_score=score,
        frame_flag=score >= cfg.min_cells,
        max_zscore=terms.max_zscore(),
        warm=bool(terms.warm.any()),
        frame_index=frame_index,
    )


def detect_frame(
    grid: StatsGrid, blocks: BlockFlowGrid, objflags, cfg: DetectorConfig, frame_index: int = -1
) -> AnomalyMap:
    """Label every cell of one frame against the current statistics.

    Cells at or below ``motion_epsilon`` are normal; cells still warming up
    never fire on motion. Object flags, when enabled, are OR-ed in.
    """
    return _assemble(motion_terms(grid, blocks, cfg), cfg.k, objflags, cfg, frame_index)


def cell_flags_from_objects(
    frame_records: list[DetectionRecord], omap: ObjectMap, grid_shape: tuple[int, int], cfg: DetectorConfig
) -> np.ndarray:
    """Mark every cell whose 4×4 footprint intersects an object-anomalous box."""
    gh, gw = grid_shape
    flags = np.zeros((gh, gw), dtype=bool)
    for rec in frame_records:
        if not object_anomaly(omap, rec, cfg.p_rare, cfg.min_total):
            continue
        x0, y0, x1, y1 = rec.pixel_bounds()
        cx0, cy0 = max(x0 // CELL_SIZE, 0), max(y0 // CELL_SIZE, 0)
        cx1, cy1 = min((x1 - 1) // CELL_SIZE, gw - 1), min((y1 - 1) // CELL_SIZE, gh - 1)
        if cx0 <= cx1 and cy0 <= cy1:
            flags[cy0 : cy1 + 1, cx0 : cx1 + 1] = True
    return flags


def label_image(amap: AnomalyMap) -> np.ndarray:
    """Grayscale rendering of cell labels: 0 normal, 128 warmup, 255 anomalous."""
    out = np.zeros(amap.shape, dtype=np.uint8)
    out[amap.labels == Label.WARMUP] = 128
    out[amap.labels == Label.ANOMALOUS] = 255
    return out
