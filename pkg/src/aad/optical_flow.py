"""Dense two-frame optical flow by polynomial expansion (Farneback).

Each frame is locally approximated by a quadratic ``f(u) = uᵀAu + bᵀu + c``
fitted with Gaussian weights. If the next frame is the previous one shifted
by ``d``, the fits are related by ``b_next = b_prev - 2·A·d``, so ``d`` can be
solved per pixel. The solve is stabilised by averaging the normal equations
over a window and refined coarse-to-fine over a Gaussian pyramid.

All coordinates follow the image convention: ``x`` is the column, ``y`` the
row, and arrays are indexed ``[y, x]``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator

import numpy as np
from scipy import ndimage

from .errors import InputError, ShapeError
from .fields import FlowField, FrameBuffer

__all__ = [
    "FlowField",
    "FlowParams",
    "PolyExpansion",
    "gaussian_pyramid",
    "polynomial_expansion",
    "displacement_step",
    "farneback_flow",
    "frame_pairing",
    "warp",
]

log = logging.getLogger(__name__)

MIN_LEVEL_SIZE = 8
PYRAMID_SIGMA = 1.0
DET_EPS = 1e-9


@dataclass(frozen=True)
class FlowParams:
    """Farneback settings.

    ``pyramid_scale`` 0.5 and ``poly_n`` 5 are the usual choices.
    ``frame_stride`` 2 compares frame t-2 with t.
    """

    pyramid_levels: int = 3
    pyramid_scale: float = 0.5
    window_size: int = 15
    iterations: int = 5
    poly_n: int = 5
    poly_sigma: float = 1.2
    frame_stride: int = 2

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise InputError("pyramid_levels must be >= 1")
        if not 0.0 < self.pyramid_scale < 1.0:
            raise InputError("pyramid_scale must lie in (0, 1)")
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise InputError("window_size must be odd and >= 3")
        if self.iterations < 1:
            raise InputError("iterations must be >= 1")
        if self.poly_n < 3 or self.poly_n % 2 == 0:
            raise InputError("poly_n must be odd and >= 3")
        if self.poly_sigma <= 0:
            raise InputError("poly_sigma must be positive")
        if self.frame_stride < 1:
            raise InputError("frame_stride must be >= 1")


@dataclass(eq=False)
class PolyExpansion:
    """Per-pixel quadratic model ``uᵀAu + bᵀu + c`` with ``A = [[a11, a12], [a12, a22]]``."""

    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    c: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.a11.shape

    def matrix(self, y: int, x: int) -> np.ndarray:
        return np.array([[self.a11[y, x], self.a12[y, x]], [self.a12[y, x], self.a22[y, x]]])

    def planes(self) -> np.ndarray:
        """The five planes that take part in the displacement solve, stacked."""
        return np.stack([self.a11, self.a12, self.a22, self.b1, self.b2])


# --------------------------------------------------------------------------
# Resampling helpers
# --------------------------------------------------------------------------


def _resize_bilinear(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Pixel-centre aligned bilinear resampling with replicate borders."""
    h, w = img.shape
    oh, ow = shape
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(img, [yy, xx], order=1, mode="nearest")


def _sample(planes: np.ndarray, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    """Bilinearly sample each plane of a ``(k, h, w)`` stack at ``(yy, xx)``."""
    out = np.empty_like(planes)
    for i in range(planes.shape[0]):
        out[i] = ndimage.map_coordinates(planes[i], [yy, xx], order=1, mode="nearest")
    return out


def warp(image: np.ndarray, flow: FlowField) -> np.ndarray:
    """Sample ``image`` at ``x + flow(x)``.

    With ``flow`` estimated from ``prev`` to ``next``, ``warp(next, flow)``
    reconstructs ``prev`` under brightness constancy.
    """
    h, w = image.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ndimage.map_coordinates(
        np.asarray(image, np.float64), [yy + flow.vy, xx + flow.vx], order=1, mode="nearest"
    )


# --------------------------------------------------------------------------
# Pyramid
# --------------------------------------------------------------------------


def _level_shapes(shape: tuple[int, int], levels: int, scale: float) -> list[tuple[int, int]]:
    shapes = [tuple(shape)]
    while len(shapes) < levels:
        h, w = shapes[-1]
        nxt = (int(round(h * scale)), int(round(w * scale)))
        if min(nxt) < MIN_LEVEL_SIZE:
            break
        shapes.append(nxt)
    return shapes


def gaussian_pyramid(frame: FrameBuffer, levels: int, scale: float) -> list[FrameBuffer]:
    """Return ``levels`` progressively blurred and downscaled copies, finest first.

    Each level is the previous one smoothed with a σ=1 Gaussian and resampled
    by ``scale``. If a level would fall below 8×8 the pyramid is truncated
    with a warning.
    """
    shapes = _level_shapes(frame.shape, levels, scale)
    if len(shapes) < levels:
        warnings.warn(
            f"pyramid clamped to {len(shapes)} levels for a {frame.width}x{frame.height} frame",
            RuntimeWarning,
            stacklevel=2,
        )
    pyramid = [frame]
    current = frame.data
    for shape in shapes[1:]:
        blurred = ndimage.gaussian_filter(current, PYRAMID_SIGMA, mode="nearest")
        current = np.clip(_resize_bilinear(blurred, shape), 0.0, 255.0)
        pyramid.append(FrameBuffer(current, frame.index))
    return pyramid


# --------------------------------------------------------------------------
# Polynomial expansion
# --------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _expansion_kernels(n: int, sigma: float) -> np.ndarray:
    """Correlation kernels mapping an n×n patch to the six LS coefficients.

    The weighted least-squares fit over a fixed neighbourhood is linear in
    the patch, ``r = (BᵀWB)⁻¹BᵀW f``, so every coefficient is a correlation of
    the image with one row of that operator. Basis order: 1, x, y, x², y², xy.
    """
    half = n // 2
    ys, xs = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    xs, ys = xs.ravel(), ys.ravel()
    g = np.exp(-(np.arange(-half, half + 1) ** 2) / (2.0 * sigma**2))
    weights = np.outer(g, g).ravel()
    basis = np.stack([np.ones_like(xs), xs, ys, xs * xs, ys * ys, xs * ys], axis=1)
    bw = basis.T * weights
    operator = np.linalg.solve(bw @ basis, bw)
    return operator.reshape(6, n, n)


def polynomial_expansion(frame: FrameBuffer | np.ndarray, n: int = 5, sigma: float = 1.2) -> PolyExpansion:
    """Fit a Gaussian-weighted quadratic around every pixel (replicate borders)."""
    img = np.asarray(frame.data if isinstance(frame, FrameBuffer) else frame, dtype=np.float64)
    if n < 3 or n % 2 == 0:
        raise InputError("poly_n must be odd and >= 3")
    if min(img.shape) < n:
        raise ShapeError(f"frame {img.shape[1]}x{img.shape[0]} smaller than expansion window {n}")
    kernels = _expansion_kernels(int(n), float(sigma))
    r = [ndimage.correlate(img, k, mode="nearest") for k in kernels]
    return PolyExpansion(a11=r[3], a12=0.5 * r[5], a22=r[4], b1=r[1], b2=r[2], c=r[0])


# --------------------------------------------------------------------------
# Displacement estimation
# --------------------------------------------------------------------------


def _solve_step(prev_planes, next_planes, vx, vy, window):
    """One Farneback update on raw arrays; returns new (vx, vy) as float64."""
    h, w = vx.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    warped = _sample(next_planes, yy + vy, xx + vx)

    a11 = 0.5 * (prev_planes[0] + warped[0])
    a12 = 0.5 * (prev_planes[1] + warped[1])
    a22 = 0.5 * (prev_planes[2] + warped[2])
    db1 = -0.5 * (warped[3] - prev_planes[3]) + a11 * vx + a12 * vy
    db2 = -0.5 * (warped[4] - prev_planes[4]) + a12 * vx + a22 * vy

    # Normal equations of A·d = Δb; A is symmetric so AᵀA = A².
    terms = np.stack([
        a11 * a11 + a12 * a12,
        a12 * (a11 + a22),
        a12 * a12 + a22 * a22,
        a11 * db1 + a12 * db2,
        a12 * db1 + a22 * db2,
    ])
    g11, g12, g22, h1, h2 = (ndimage.uniform_filter(t, window, mode="nearest") for t in terms)

    det = g11 * g22 - g12 * g12
    ok = det >= DET_EPS
    safe = np.where(ok, det, 1.0)
    new_vx = np.where(ok, (g22 * h1 - g12 * h2) / safe, vx)
    new_vy = np.where(ok, (g11 * h2 - g12 * h1) / safe, vy)
    return new_vx, new_vy


def displacement_step(
    prev: PolyExpansion, next: PolyExpansion, prior: FlowField, window_size: int = 15
) -> FlowField:
    """Refine ``prior`` once by solving the windowed polynomial-matching system.

    Pixels whose averaged system is singular (det < 1e-9) keep the prior.
    """
    if prev.shape != next.shape or prev.shape != prior.shape:
        raise ShapeError(f"expansion/prior shapes differ: {prev.shape}, {next.shape}, {prior.shape}")
    vx, vy = _solve_step(
        prev.planes(), next.planes(), prior.vx.astype(np.float64), prior.vy.astype(np.float64), window_size
    )
    return FlowField(vx, vy)


def farneback_flow(prev: FrameBuffer, next: FrameBuffer, params: FlowParams = FlowParams()) -> FlowField:
    """Dense flow from ``prev`` to ``next``: ``prev(x) ≈ next(x + flow(x))``."""
    if prev.shape != next.shape:
        raise ShapeError(f"frame shapes differ: {prev.shape} vs {next.shape}")
    if min(prev.shape) < MIN_LEVEL_SIZE:
        raise ShapeError(f"frames must be at least {MIN_LEVEL_SIZE}x{MIN_LEVEL_SIZE}")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pyr_prev = gaussian_pyramid(prev, params.pyramid_levels, params.pyramid_scale)
        pyr_next = gaussian_pyramid(next, params.pyramid_levels, params.pyramid_scale)

    vx = vy = None
    for level in range(len(pyr_prev) - 1, -1, -1):
        p_img, n_img = pyr_prev[level], pyr_next[level]
        shape = p_img.shape
        if vx is None:
            vx = np.zeros(shape)
            vy = np.zeros(shape)
        else:
            # Rescale displacements by the actual size ratio (1/scale up to rounding).
            sy, sx = shape[0] / vx.shape[0], shape[1] / vx.shape[1]
            vx = _resize_bilinear(vx, shape) * sx
            vy = _resize_bilinear(vy, shape) * sy
        n = min(params.poly_n, *shape) | 1
        if n > min(shape):
            n -= 2
        prev_planes = polynomial_expansion(p_img, n, params.poly_sigma).planes()
        next_planes = polynomial_expansion(n_img, n, params.poly_sigma).planes()
        for _ in range(params.iterations):
            vx, vy = _solve_step(prev_planes, next_planes, vx, vy, params.window_size)

    return FlowField(vx, vy)


def frame_pairing(stream: Iterable[FrameBuffer], stride: int = 2) -> Iterator[tuple[FrameBuffer, FrameBuffer]]:
    """Yield ``(frame[t - stride], frame[t])`` for every ``t >= stride``.

    Only the last ``stride`` frames are held in memory.
    """
    if stride < 1:
        raise InputError("stride must be >= 1")
    window: list[FrameBuffer] = []
    for frame in stream:
        window.append(frame)
        if len(window) > stride:
            yield window.pop(0), frame
