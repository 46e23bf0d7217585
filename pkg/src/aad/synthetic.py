"""Ground-truthed synthetic surveillance scenes.

Slow "walkers" are Gaussian blobs (σ = 3 px) doing bounded random walks; an
optional fast "intruder" moves at constant velocity during a known frame
interval and stands still otherwise. Exactly the frames of that interval are
labelled anomalous.
Frames are rounded to integers so that writing them as 8-bit PGM is lossless.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InputError
from .fields import FrameBuffer
from .frame_io import write_pgm

__all__ = ["Intruder", "SceneSpec", "render_sequence", "write_sequence", "scene_from_config"]

WALKER_SIGMA = 3.0
INTRUDER_SIGMA = 6.0
BACKGROUND = 40.0
TEXTURE_SIGMA = 1.5
HEADING_JITTER = 0.2  # radians per frame
TEXTURE_AMPLITUDE = 40.0


@dataclass(frozen=True)
class Intruder:
    entry: int
    exit: int
    speed: float
    direction: float = 0.0  # degrees, 0 = +x, 90 = +y

    def velocity(self) -> tuple[float, float]:
        rad = math.radians(self.direction)
        return self.speed * math.cos(rad), self.speed * math.sin(rad)


@dataclass(frozen=True)
class SceneSpec:
    width: int = 160
    height: int = 120
    frames: int = 200
    walkers: int = 12
    walker_speed: float = 1.0
    intruder: Intruder | None = None
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.frames < 3:
            raise InputError("a scene needs at least 3 frames")
        if self.width < 16 or self.height < 16:
            raise InputError("scene must be at least 16x16")
        if self.intruder is not None:
            if self.intruder.speed <= self.walker_speed:
                raise InputError("intruder must be faster than the walkers")
            if not 0 <= self.intruder.entry <= self.intruder.exit < self.frames:
                raise InputError("intruder interval must lie within the sequence")


def _reflect(p: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fold coordinates back into ``[lo, hi]`` as if bouncing off both walls."""
    span = hi - lo
    q = np.mod(p - lo, 2.0 * span)
    return lo + np.where(q > span, 2.0 * span - q, q)


def _walker_tracks(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Centres of every walker per frame, shape ``(frames, walkers, 2)`` as (x, y).

    Walkers keep a constant speed ``walker_speed`` and wander in heading
    (a correlated random walk), bouncing off the frame margins.
    """
    margin = 2.0 * WALKER_SIGMA
    lo = np.array([margin, margin])
    hi = np.array([spec.width - 1 - margin, spec.height - 1 - margin])
    pos = rng.uniform(lo, hi, size=(spec.walkers, 2))
    heading = rng.uniform(0.0, 2.0 * np.pi, spec.walkers)
    tracks = np.empty((spec.frames, spec.walkers, 2))
    for t in range(spec.frames):
        tracks[t] = pos
        heading = heading + rng.normal(0.0, HEADING_JITTER, spec.walkers)
        vel = spec.walker_speed * np.stack([np.cos(heading), np.sin(heading)], axis=1)
        nxt = pos + vel
        for d in range(2):
            bounced = (nxt[:, d] < lo[d]) | (nxt[:, d] > hi[d])
            vel[bounced, d] = -vel[bounced, d]
            nxt[:, d] = _reflect(nxt[:, d], lo[d], hi[d])
        heading = np.arctan2(vel[:, 1], vel[:, 0])
        pos = nxt
    return tracks


def _intruder_track(spec: SceneSpec) -> dict[int, tuple[float, float]]:
    """Intruder centre per frame.

    The intruder moves only during ``[entry, exit]``; before and after it is
    parked at its entry and exit positions. A blob that popped in and out of
    existence would produce flow transients outside the labelled interval.
    """
    intr = spec.intruder
    if intr is None:
        return {}
    vx, vy = intr.velocity()
    mid = 0.5 * (intr.entry + intr.exit)
    cx, cy = 0.5 * (spec.width - 1), 0.5 * (spec.height - 1)
    margin = 2.0 * INTRUDER_SIGMA
    track = {}
    for t in range(spec.frames):
        s = min(max(t, intr.entry), intr.exit) - mid
        x = _reflect(np.array(cx + vx * s), margin, spec.width - 1 - margin)
        y = _reflect(np.array(cy + vy * s), margin, spec.height - 1 - margin)
        track[t] = (float(x), float(y))
    return track


def _splat(img: np.ndarray, x: float, y: float, sigma: float, amplitude: float) -> None:
    r = int(math.ceil(4 * sigma))
    h, w = img.shape
    x0, x1 = max(int(x) - r, 0), min(int(x) + r + 1, w)
    y0, y1 = max(int(y) - r, 0), min(int(y) + r + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    gx = np.exp(-((np.arange(x0, x1) - x) ** 2) / (2 * sigma**2))
    gy = np.exp(-((np.arange(y0, y1) - y) ** 2) / (2 * sigma**2))
    img[y0:y1, x0:x1] += amplitude * np.outer(gy, gx)


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Static smooth texture, so background flow is well determined (near zero)."""
    texture = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (spec.height, spec.width)), TEXTURE_SIGMA, mode="wrap")
    texture *= TEXTURE_AMPLITUDE / max(np.abs(texture).max(), 1e-12)
    return BACKGROUND + texture


def render_sequence(spec: SceneSpec) -> tuple[list[FrameBuffer], np.ndarray]:
    """Render the scene; returns frames and per-frame 0/1 ground truth."""
    rng = np.random.default_rng(spec.seed)
    background = _background(spec, rng)
    amplitudes = rng.uniform(120.0, 200.0, spec.walkers)
    tracks = _walker_tracks(spec, rng)
    intruder = _intruder_track(spec)
    truth = np.zeros(spec.frames, dtype=np.int8)
    if spec.intruder is not None:
        truth[spec.intruder.entry : spec.intruder.exit + 1] = 1
    frames = []
    for t in range(spec.frames):
        img = background.copy()
        for (x, y), amp in zip(tracks[t], amplitudes):
            _splat(img, x, y, WALKER_SIGMA, amp)
        if intruder:
            _splat(img, *intruder[t], INTRUDER_SIGMA, 220.0)
        if spec.noise_sigma > 0:
            img += rng.normal(0.0, spec.noise_sigma, img.shape)
        frames.append(FrameBuffer(np.clip(np.rint(img), 0, 255), t))
    return frames, truth


def write_sequence(frames, truth, out_dir) -> Path:
    """Write ``frame_NNNN.pgm`` files plus ``truth.txt`` (one label per line)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for f in frames:
        write_pgm(out / f"frame_{f.index:04d}.pgm", f.data)
    (out / "truth.txt").write_text("".join(f"{int(v)}\n" for v in truth))
    return out


def scene_from_config(path) -> SceneSpec:
    """Read a ``[scene]`` section; ``intruder_*`` keys enable the intruder."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read scene config {path}")
    if not parser.has_section("scene"):
        raise ConfigError(f"{path}: missing [scene] section")
    sec = parser["scene"]
    kwargs = {}
    try:
        for f in fields(SceneSpec):
            if f.name == "intruder" or f.name not in sec:
                continue
            kind = int if f.name in ("width", "height", "frames", "walkers", "seed") else float
            kwargs[f.name] = kind(sec[f.name])
        if "intruder_entry" in sec:
            kwargs["intruder"] = Intruder(
                entry=int(sec["intruder_entry"]),
                exit=int(sec["intruder_exit"]),
                speed=float(sec["intruder_speed"]),
                direction=float(sec.get("intruder_direction", "0")),
            )
        return SceneSpec(**kwargs)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid scene setting ({exc})") from exc
