import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aad.errors import InputError, ShapeError
from aad.fields import FlowField, FrameBuffer
from aad.optical_flow import (
    FlowParams,
    displacement_step,
    farneback_flow,
    frame_pairing,
    gaussian_pyramid,
    polynomial_expansion,
    warp,
)

from conftest import shifted_pair, smooth_texture

M = 16  # interior margin


def interior_epe(flow, dx, dy):
    ex = flow.vx[M:-M, M:-M] - dx
    ey = flow.vy[M:-M, M:-M] - dy
    return float(np.mean(np.hypot(ex, ey)))


class TestParams:
    def test_defaults(self):
        p = FlowParams()
        assert (p.pyramid_levels, p.window_size, p.iterations, p.poly_sigma) == (3, 15, 5, 1.2)
        assert (p.pyramid_scale, p.poly_n, p.frame_stride) == (0.5, 5, 2)

    @pytest.mark.parametrize(
        "kw", [dict(pyramid_levels=0), dict(iterations=0), dict(window_size=4), dict(window_size=1), dict(poly_n=4)]
    )
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            FlowParams(**kw)


class TestPyramid:
    def test_constant_preserved(self):
        levels = gaussian_pyramid(FrameBuffer(np.full((64, 64), 100.0)), 3, 0.5)
        for lv in levels:
            np.testing.assert_allclose(lv.data, 100.0, atol=1e-12)

    def test_sizes(self):
        levels = gaussian_pyramid(FrameBuffer(np.zeros((64, 64))), 3, 0.5)
        assert [lv.shape for lv in levels] == [(64, 64), (32, 32), (16, 16)]

    def test_clamped_with_warning(self):
        with pytest.warns(RuntimeWarning):
            levels = gaussian_pyramid(FrameBuffer(np.zeros((16, 16))), 3, 0.5)
        assert [lv.shape for lv in levels] == [(16, 16), (8, 8)]


class TestExpansion:
    def test_constant(self):
        e = polynomial_expansion(np.full((20, 20), 37.0))
        for plane in (e.a11, e.a12, e.a22, e.b1, e.b2):
            np.testing.assert_allclose(plane[3:-3, 3:-3], 0.0, atol=1e-9)
        np.testing.assert_allclose(e.c[3:-3, 3:-3], 37.0, atol=1e-9)

    def test_linear_ramp(self):
        yy, xx = np.mgrid[0:20, 0:20].astype(float)
        e = polynomial_expansion(2.0 * xx)
        s = (slice(3, -3), slice(3, -3))
        np.testing.assert_allclose(e.b1[s], 2.0, atol=1e-6)
        np.testing.assert_allclose(e.b2[s], 0.0, atol=1e-6)
        for plane in (e.a11, e.a12, e.a22):
            np.testing.assert_allclose(plane[s], 0.0, atol=1e-6)

    def test_quadratic(self):
        yy, xx = np.mgrid[0:20, 0:20].astype(float)
        e = polynomial_expansion((xx - 10.0) ** 2)
        np.testing.assert_allclose(e.a11[3:-3, 3:-3], 1.0, atol=1e-6)
        np.testing.assert_allclose(e.a22[3:-3, 3:-3], 0.0, atol=1e-6)

    def test_full_quadratic_recovered(self):
        # f = 3x² + 2xy - y² + 4x - 5y + 7 around every interior pixel
        yy, xx = np.mgrid[0:24, 0:24].astype(float)
        e = polynomial_expansion(3 * xx**2 + 2 * xx * yy - yy**2 + 4 * xx - 5 * yy + 7)
        y, x = 10, 13
        A = e.matrix(y, x)
        np.testing.assert_allclose(A, [[3, 1], [1, -1]], atol=1e-6)
        assert A[0, 1] == A[1, 0]
        # gradient of f at (x, y)
        assert e.b1[y, x] == pytest.approx(6 * x + 2 * y + 4, abs=1e-6)
        assert e.b2[y, x] == pytest.approx(2 * x - 2 * y - 5, abs=1e-6)

    def test_planes_match_frame(self):
        e = polynomial_expansion(np.zeros((11, 17)))
        assert e.planes().shape[1:] == (11, 17)


class TestDisplacementStep:
    def test_identical_frames_zero(self):
        tex = smooth_texture(64)
        e = polynomial_expansion(tex)
        d = displacement_step(e, e, FlowField.zeros(64, 64))
        assert np.max(np.abs(d.vx)) == 0.0 and np.max(np.abs(d.vy)) == 0.0

    def test_single_level_shift(self):
        prev, nxt = shifted_pair(2, 0, size=96)
        ep, en = polynomial_expansion(prev), polynomial_expansion(nxt)
        d = displacement_step(ep, en, FlowField.zeros(96, 96))
        assert abs(float(np.mean(d.vx[M:-M, M:-M])) - 2.0) < 0.5
        assert abs(float(np.mean(d.vy[M:-M, M:-M]))) < 0.5

    def test_textureless_keeps_prior(self):
        e = polynomial_expansion(np.full((32, 32), 50.0))
        prior = FlowField(np.full((32, 32), 1.25, np.float32), np.full((32, 32), -0.5, np.float32))
        assert displacement_step(e, e, prior).identical(prior)

    def test_shape_mismatch(self):
        e = polynomial_expansion(np.zeros((16, 16)))
        with pytest.raises(ShapeError):
            displacement_step(e, e, FlowField.zeros(8, 8))


class TestFarneback:
    def test_identical_frames(self):
        f = FrameBuffer(smooth_texture(128))
        flow = farneback_flow(f, f)
        assert float(np.max(flow.magnitude())) < 1e-3

    @pytest.mark.parametrize("dx, dy", [(3, 0), (-2, 1), (0, -3), (1, 1)])
    def test_integer_shifts(self, dx, dy):
        prev, nxt = shifted_pair(dx, dy, size=128, seed=5)
        assert interior_epe(farneback_flow(prev, nxt), dx, dy) < 0.5

    def test_warp_reduces_residual(self):
        prev, nxt = shifted_pair(2, 1, size=128, seed=3)
        flow = farneback_flow(prev, nxt)
        s = (slice(M, -M), slice(M, -M))
        warped = np.abs(prev.data - warp(nxt.data, flow))[s].mean()
        baseline = np.abs(prev.data - nxt.data)[s].mean()
        assert warped < baseline

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            farneback_flow(FrameBuffer(np.zeros((16, 16))), FrameBuffer(np.zeros((16, 17))))
        with pytest.raises(ShapeError):
            farneback_flow(FrameBuffer(np.zeros((4, 4))), FrameBuffer(np.zeros((4, 4))))

    def test_small_frames_clamp_silently(self):
        f = FrameBuffer(smooth_texture(12)[:12, :12])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            flow = farneback_flow(f, f)
        assert flow.shape == (12, 12)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31), st.integers(8, 40), st.integers(8, 40))
    def test_noise_frames_stay_finite(self, seed, h, w):
        r = np.random.default_rng(seed)
        a = FrameBuffer(r.uniform(0, 255, (h, w)))
        b = FrameBuffer(r.uniform(0, 255, (h, w)))
        flow = farneback_flow(a, b)
        assert np.isfinite(flow.vx).all() and np.isfinite(flow.vy).all()


class TestPairing:
    def frames(self, n):
        return [FrameBuffer(np.zeros((2, 2)), i) for i in range(n)]

    def test_stride_two(self):
        pairs = [(a.index, b.index) for a, b in frame_pairing(self.frames(5), 2)]
        assert pairs == [(0, 2), (1, 3), (2, 4)]

    def test_stride_one(self):
        assert len(list(frame_pairing(self.frames(5), 1))) == 4

    def test_too_short(self):
        assert list(frame_pairing(self.frames(2), 2)) == []

    def test_lazy(self):
        def stream():
            yield from self.frames(3)
            raise AssertionError("read past the first pair")

        gen = frame_pairing(stream(), 2)
        a, b = next(gen)
        assert (a.index, b.index) == (0, 2)
