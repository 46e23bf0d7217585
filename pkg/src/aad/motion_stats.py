"""Streaming per-cell motion statistics (the motion distribution map).

Every cell keeps, per channel, the 5-tuple (mean, max, min, variance, count).
The mean follows the incremental form ``mean_N = (mean_{N-1}·(N-1) + x_N) / N``
and the variance the single-pass Welford recurrence

    var_N = ((N-2)·var_{N-1} + (x_N - mean_N)·(x_N - mean_{N-1})) / (N-1)

After an anomaly the history weight is halved,
``mean = (mean·(N-1)/2 + x) / ((N-1)/2 + 1)``, so the cell re-centres on the
new regime quickly. Counts are real-valued because of that halving.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, InsufficientDataError, LengthError, ShapeError, StateError
from .pooling import BlockFlowGrid

__all__ = [
    "CHANNELS",
    "CellStats",
    "StatsGrid",
    "update_cell",
    "adapt_on_anomaly",
    "zscore",
    "update_grid",
    "update_arrays",
    "adapt_arrays",
    "write_stats_snapshot",
    "read_stats_snapshot",
    "save_stats_snapshot",
    "load_stats_snapshot",
]

CHANNELS = ("vx", "vy", "magnitude")

STATS_MAGIC = b"AADS"
STATS_VERSION = 1
_STATS_HEADER = struct.Struct("<4s4I")


@dataclass(frozen=True)
class CellStats:
    mean: float = 0.0
    max: float = -math.inf
    min: float = math.inf
    variance: float = 0.0
    count: float = 0.0


def _check_finite(x):
    if not math.isfinite(x):
        raise InputError(f"observation must be finite, got {x!r}")


def update_cell(stats: CellStats, x: float) -> CellStats:
    x = float(x)
    _check_finite(x)
    n = stats.count + 1.0
    if stats.count == 0:
        return CellStats(mean=x, max=x, min=x, variance=0.0, count=1.0)
    mean = (stats.mean * stats.count + x) / n
    variance = ((n - 2.0) * stats.variance + (x - mean) * (x - stats.mean)) / (n - 1.0)
    return CellStats(mean=mean, max=max(stats.max, x), min=min(stats.min, x), variance=variance, count=n)


def adapt_on_anomaly(stats: CellStats, x: float) -> CellStats:
    """Fold ``x`` in with the history weight halved; variance is carried over."""
    x = float(x)
    _check_finite(x)
    if stats.count <= 0:
        raise StateError("adaptation requires at least one prior observation")
    half = (stats.count - 1.0) / 2.0
    return replace(
        stats,
        mean=(stats.mean * half + x) / (half + 1.0),
        count=half + 1.0,
        max=max(stats.max, x),
        min=min(stats.min, x),
    )


def zscore(stats: CellStats, x: float, sigma_floor: float = 0.01) -> float:
    if stats.count < 2:
        raise InsufficientDataError("z-score needs at least two observations")
    return abs(x - stats.mean) / max(math.sqrt(stats.variance), sigma_floor)


# --------------------------------------------------------------------------
# Vectorised kernels (same recurrences, applied under a mask)
# --------------------------------------------------------------------------


def update_arrays(mean, mx, mn, var, count, x, mask=None) -> None:
    """In-place :func:`update_cell` over arrays, restricted to ``mask``."""
    x = np.asarray(x, dtype=np.float64)
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    n_old = count
    n_new = n_old + 1.0
    first = mask & (n_old == 0)
    rest = mask & (n_old > 0)

    new_mean = np.where(rest, (mean * n_old + x) / n_new, mean)
    denom = np.where(rest, n_new - 1.0, 1.0)
    new_var = np.where(rest, ((n_new - 2.0) * var + (x - new_mean) * (x - mean)) / denom, var)

    mean[...] = np.where(first, x, new_mean)
    var[...] = np.where(first, 0.0, new_var)
    mx[...] = np.where(mask, np.maximum(mx, x), mx)
    mn[...] = np.where(mask, np.minimum(mn, x), mn)
    count[...] = np.where(mask, n_new, n_old)


def adapt_arrays(mean, mx, mn, var, count, x, mask) -> None:
    """In-place :func:`adapt_on_anomaly` over arrays, restricted to ``mask``."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(mask & (count <= 0)):
        raise StateError("adaptation requires at least one prior observation")
    half = (count - 1.0) / 2.0
    mean[...] = np.where(mask, (mean * half + x) / (half + 1.0), mean)
    count[...] = np.where(mask, half + 1.0, count)
    mx[...] = np.where(mask, np.maximum(mx, x), mx)
    mn[...] = np.where(mask, np.minimum(mn, x), mn)


# --------------------------------------------------------------------------
# Grid
# --------------------------------------------------------------------------


@dataclass(eq=False)
class StatsGrid:
    """Channel-major arrays of shape ``(len(CHANNELS), grid_h, grid_w)``."""

    mean: np.ndarray
    max: np.ndarray
    min: np.ndarray
    variance: np.ndarray
    count: np.ndarray

    @classmethod
    def empty(cls, grid_h: int, grid_w: int, channels: int = len(CHANNELS)) -> StatsGrid:
        shape = (channels, grid_h, grid_w)
        return cls(
            mean=np.zeros(shape),
            max=np.full(shape, -np.inf),
            min=np.full(shape, np.inf),
            variance=np.zeros(shape),
            count=np.zeros(shape),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape[1:]

    @property
    def channels(self) -> int:
        return self.mean.shape[0]

    def arrays(self):
        return self.mean, self.max, self.min, self.variance, self.count

    def copy(self) -> StatsGrid:
        return StatsGrid(*(a.copy() for a in self.arrays()))

    def cell(self, y: int, x: int, channel: int | str = "magnitude") -> CellStats:
        c = CHANNELS.index(channel) if isinstance(channel, str) else channel
        return CellStats(*(float(a[c, y, x]) for a in self.arrays()))

    def identical(self, other: StatsGrid) -> bool:
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays()))


def update_grid(grid: StatsGrid, blocks: BlockFlowGrid, flags=None, motion_epsilon: float = 0.1) -> StatsGrid:
    """Return a new grid with this frame's block vectors folded in.

    Only cells whose magnitude exceeds ``motion_epsilon`` are touched. Those
    labelled anomalous in ``flags`` (an AnomalyMap or a boolean array) are
    adapted, the rest get a regular update.
    """
    if grid.shape != blocks.shape:
        raise ShapeError(f"stats grid {grid.shape} does not match blocks {blocks.shape}")
    anomalous = _anomalous_mask(flags, grid.shape)
    obs = blocks.channels()
    moving = blocks.magnitude > motion_epsilon

    out = grid.copy()
    adapt = np.broadcast_to(moving & anomalous, obs.shape)
    plain = np.broadcast_to(moving & ~anomalous, obs.shape)
    if adapt.any():
        adapt_arrays(*out.arrays(), obs, adapt)
    update_arrays(*out.arrays(), obs, plain)
    return out


def _anomalous_mask(flags, shape) -> np.ndarray:
    if flags is None:
        return np.zeros(shape, dtype=bool)
    mask = flags.anomalous if hasattr(flags, "anomalous") else np.asarray(flags, dtype=bool)
    if mask.shape != tuple(shape):
        raise ShapeError(f"flags {mask.shape} do not match grid {shape}")
    return mask


# --------------------------------------------------------------------------
# Snapshot format
# --------------------------------------------------------------------------


def write_stats_snapshot(grid: StatsGrid, sink) -> int:
    """Write ``AADS`` header (magic, version, grid_w, grid_h, channels as u32)
    followed by per-cell, per-channel ``(mean, max, min, variance, count)``
    little-endian f64 in row-major cell order."""
    gh, gw = grid.shape
    head = _STATS_HEADER.pack(STATS_MAGIC, STATS_VERSION, gw, gh, grid.channels)
    # (5, C, H, W) -> (H, W, C, 5)
    body = np.stack(grid.arrays()).transpose(2, 3, 1, 0).astype("<f8").tobytes()
    sink.write(head)
    sink.write(body)
    return len(head) + len(body)


def read_stats_snapshot(source) -> StatsGrid:
    data = bytes(source) if isinstance(source, (bytes, bytearray, memoryview)) else source.read()
    if len(data) < _STATS_HEADER.size:
        raise LengthError("stats snapshot header truncated")
    magic, version, gw, gh, channels = _STATS_HEADER.unpack_from(data)
    if magic != STATS_MAGIC:
        raise FormatError(f"bad stats snapshot magic {magic!r}")
    if version != STATS_VERSION:
        raise FormatError(f"unsupported stats snapshot version {version}")
    need = _STATS_HEADER.size + gh * gw * channels * 5 * 8
    if len(data) != need:
        raise LengthError(f"stats snapshot has {len(data)} bytes, expected {need}")
    values = np.frombuffer(data, dtype="<f8", offset=_STATS_HEADER.size).astype(np.float64)
    stacked = values.reshape(gh, gw, channels, 5).transpose(3, 2, 0, 1)
    return StatsGrid(*(np.ascontiguousarray(a) for a in stacked))


def save_stats_snapshot(path, grid: StatsGrid) -> int:
    buf = io.BytesIO()
    n = write_stats_snapshot(grid, buf)
    Path(path).write_bytes(buf.getvalue())
    return n


def load_stats_snapshot(path) -> StatsGrid:
    return read_stats_snapshot(Path(path).read_bytes())
