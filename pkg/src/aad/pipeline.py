"""Streaming orchestration: flow -> pooling -> detect -> update.

Per frame pair the order is fixed: the detector labels the frame against a
snapshot of the statistics, then the statistics absorb the frame (adapting
cells that were labelled anomalous). Object flags are likewise computed from
the object map *before* the frame's own detections are accumulated.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .detector import AnomalyMap, DetectorConfig, MotionTerms, _assemble, cell_flags_from_objects, detect_frame, motion_terms
from .errors import AADError, ConfigError, FormatError, ShapeError
from .fields import FlowField, FrameBuffer
from .frame_io import load_flow_cache, save_flow_cache
from .motion_stats import StatsGrid, update_grid
from .object_map import DEFAULT_CLASSES, DetectionRecord, ObjectMap, accumulate
from .optical_flow import FlowParams, farneback_flow, frame_pairing
from .pooling import BlockFlowGrid, pool_flow

__all__ = [
    "RunArtifacts",
    "RunResult",
    "flow_cache_path",
    "cached_flow",
    "object_flag_sequence",
    "run_blocks",
    "frozen_terms",
    "maps_at_k",
    "run_frames",
]

log = logging.getLogger(__name__)


@dataclass(eq=False)
class RunArtifacts:
    """k-independent inputs of the detector for every processed frame.

    Enough to re-run detection at any k without recomputing optical flow.
    """

    frame_indices: np.ndarray
    blocks: list[BlockFlowGrid]
    objflags: list[np.ndarray] | None
    num_frames: int

    def save(self, path) -> None:
        vx = np.stack([b.vx for b in self.blocks]) if self.blocks else np.zeros((0, 0, 0))
        vy = np.stack([b.vy for b in self.blocks]) if self.blocks else np.zeros((0, 0, 0))
        payload = dict(frame_indices=self.frame_indices, vx=vx, vy=vy, num_frames=self.num_frames)
        if self.objflags is not None:
            payload["objflags"] = np.stack(self.objflags) if self.objflags else np.zeros(vx.shape, bool)
        with open(path, "wb") as fh:
            np.savez_compressed(fh, **payload)

    @classmethod
    def load(cls, path) -> RunArtifacts:
        try:
            with np.load(path) as data:
                vx, vy = data["vx"], data["vy"]
                objflags = list(data["objflags"]) if "objflags" in data else None
                return cls(
                    frame_indices=data["frame_indices"].astype(np.int64),
                    blocks=[BlockFlowGrid(a, b) for a, b in zip(vx, vy)],
                    objflags=objflags,
                    num_frames=int(data["num_frames"]),
                )
        except (OSError, KeyError, ValueError) as exc:
            raise FormatError(f"{path}: not a run artifact file ({exc})") from exc


@dataclass(eq=False)
class RunResult:
    maps: list[AnomalyMap]
    grid: StatsGrid
    artifacts: RunArtifacts
    object_map: ObjectMap | None = None
    recomputed: int = 0  # flow fields computed rather than read from cache

    def frame_table(self) -> list[tuple[int, int, bool, float]]:
        return [(m.frame_index, m.frame_score, m.frame_flag, m.max_zscore) for m in self.maps]


# --------------------------------------------------------------------------
# Flow with caching
# --------------------------------------------------------------------------


def flow_cache_path(cache_dir, src: int, dst: int) -> Path:
    return Path(cache_dir) / f"flow_{src}_{dst}.aadf"


def cached_flow(prev: FrameBuffer, next: FrameBuffer, params: FlowParams, cache_dir=None) -> tuple[FlowField, bool]:
    """Return ``(flow, computed)``; reads the cache when a valid entry exists."""
    path = None
    if cache_dir is not None:
        path = flow_cache_path(cache_dir, prev.index, next.index)
        if path.exists():
            try:
                flow, header = load_flow_cache(path)
                if flow.shape == prev.shape and header.frame_pair == (prev.index, next.index):
                    return flow, False
                log.warning("%s: cache entry does not match frame pair, recomputing", path)
            except AADError as exc:
                log.warning("%s: unreadable cache entry (%s), recomputing", path, exc)
    flow = farneback_flow(prev, next, params)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_flow_cache(path, flow, (prev.index, next.index))
    return flow, True


# --------------------------------------------------------------------------
# Detection loops
# --------------------------------------------------------------------------


def _group_records(records: Iterable[DetectionRecord]) -> dict[int, list[DetectionRecord]]:
    grouped: dict[int, list[DetectionRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.frame_index, []).append(rec)
    return grouped


def object_flag_sequence(
    records: Sequence[DetectionRecord],
    frame_indices: Sequence[int],
    frame_size: tuple[int, int],
    grid_shape: tuple[int, int],
    cfg: DetectorConfig,
    num_classes: int = len(DEFAULT_CLASSES),
) -> tuple[list[np.ndarray], ObjectMap]:
    """Per-frame cell flags from object rarity, plus the final object map.

    Every frame's detections are scored against the map built from earlier
    frames, then accumulated.
    """
    width, height = frame_size
    omap = ObjectMap(width, height, num_classes)
    grouped = _group_records(records)
    targets = set(int(i) for i in frame_indices)
    last = max([*targets, *grouped]) if (targets or grouped) else -1
    flags = {}
    for t in range(last + 1):
        recs = grouped.get(t, [])
        if t in targets:
            flags[t] = cell_flags_from_objects(recs, omap, grid_shape, cfg)
        if recs:
            omap = accumulate(omap, recs)
    return [flags[int(i)] for i in frame_indices], omap


def run_blocks(
    blocks: Sequence[BlockFlowGrid],
    cfg: DetectorConfig,
    objflags: Sequence[np.ndarray] | None = None,
    frame_indices: Sequence[int] | None = None,
) -> tuple[list[AnomalyMap], StatsGrid]:
    """Adaptive detect-then-update loop over precomputed block grids."""
    if not blocks:
        return [], StatsGrid.empty(0, 0)
    grid = StatsGrid.empty(*blocks[0].shape)
    if frame_indices is None:
        frame_indices = range(len(blocks))
    maps = []
    for i, (b, idx) in enumerate(zip(blocks, frame_indices)):
        of = objflags[i] if objflags is not None else None
        amap = detect_frame(grid, b, of, cfg, int(idx))
        grid = update_grid(grid, b, amap if cfg.adapt else None, cfg.motion_epsilon)
        maps.append(amap)
    return maps, grid


def frozen_terms(blocks: Sequence[BlockFlowGrid], cfg: DetectorConfig) -> list[MotionTerms]:
    """Motion terms along the non-adaptive statistics trajectory.

    Without adaptation the statistics never depend on k, so one pass serves
    every threshold of a sweep.
    """
    if not blocks:
        return []
    grid = StatsGrid.empty(*blocks[0].shape)
    out = []
    for b in blocks:
        out.append(motion_terms(grid, b, cfg))
        grid = update_grid(grid, b, None, cfg.motion_epsilon)
    return out


def maps_at_k(terms: Sequence[MotionTerms], k: float, cfg: DetectorConfig, objflags=None, frame_indices=None) -> list[AnomalyMap]:
    if frame_indices is None:
        frame_indices = range(len(terms))
    return [
        _assemble(t, k, objflags[i] if objflags is not None else None, cfg, int(idx))
        for i, (t, idx) in enumerate(zip(terms, frame_indices))
    ]


def run_frames(
    frames: Iterable[FrameBuffer],
    cfg: DetectorConfig = DetectorConfig(),
    params: FlowParams = FlowParams(),
    records: Sequence[DetectionRecord] | None = None,
    num_classes: int = len(DEFAULT_CLASSES),
    cache_dir=None,
    num_frames: int | None = None,
) -> RunResult:
    """Full streaming pipeline over an ordered frame stream."""
    blocks: list[BlockFlowGrid] = []
    indices: list[int] = []
    recomputed = 0
    shape = None
    seen = 0
    for prev, nxt in frame_pairing(frames, params.frame_stride):
        if shape is None:
            shape = prev.shape
        elif nxt.shape != shape:
            raise ShapeError(f"frame {nxt.index} is {nxt.shape}, sequence is {shape}")
        flow, computed = cached_flow(prev, nxt, params, cache_dir)
        recomputed += computed
        blocks.append(pool_flow(flow))
        indices.append(nxt.index)
        seen = nxt.index + 1
    n = num_frames if num_frames is not None else seen

    objflags = omap = None
    if cfg.use_objects:
        if records is None:
            raise ConfigError("use_objects requires detection records")
        frame_size = (shape[1], shape[0]) if shape else (0, 0)
        grid_shape = blocks[0].shape if blocks else (0, 0)
        objflags, omap = object_flag_sequence(records, indices, frame_size, grid_shape, cfg, num_classes)

    maps, grid = run_blocks(blocks, cfg, objflags, indices)
    artifacts = RunArtifacts(np.asarray(indices, dtype=np.int64), blocks, objflags, n)
    return RunResult(maps, grid, artifacts, omap, recomputed)

