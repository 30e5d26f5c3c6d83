import math

import numpy as np
import pytest

from remora.errors import InvalidInputError
from remora.synthflow import (DenseFlow, MotionSpec, bilinear_sample, compose_flows, endpoint_error,
                              render_clip, texture, warp)


class TestRenderClip:
    def test_static(self):
        clip, flows = render_clip(MotionSpec("translate"), 4, 16, 16, 3)
        assert all((f == clip.frames[0]).all() for f in clip.frames)
        assert len(flows) == 3 and all(not f.grid.any() for f in flows)

    def test_unit_translation_flow(self):
        _, flows = render_clip(MotionSpec("translate", ty=0, tx=1), 3, 16, 16, 0)
        for f in flows:
            assert (f.grid[..., 0] == 0).all() and (f.grid[..., 1] == 1).all()

    @pytest.mark.parametrize("pixel", [(0, 0), (10, 50), (63, 5), (31, 40)])
    def test_rotation_closed_form(self, pixel):
        theta, H, W = 0.1, 64, 64
        cy, cx = (H - 1) / 2, (W - 1) / 2
        y, x = pixel
        # counter-clockwise in (x, y) axes: (x', y') = R (x, y)
        rx, ry = x - cx, y - cy
        xr = math.cos(theta) * rx - math.sin(theta) * ry
        yr = math.sin(theta) * rx + math.cos(theta) * ry
        flow = MotionSpec("rotate", theta=theta).flow(H, W).grid[y, x]
        assert flow[0] == pytest.approx(yr - ry, abs=1e-12)
        assert flow[1] == pytest.approx(xr - rx, abs=1e-12)

    def test_texture_range(self):
        for seed in range(5):
            t = texture(64, 64, seed)
            assert t.dtype == np.uint8 and t.shape == (64, 64, 3)
            assert (t.max(axis=(0, 1)).astype(int) - t.min(axis=(0, 1)) >= 128).all()

    @pytest.mark.parametrize("spec", [MotionSpec("translate", ty=5), MotionSpec("translate", tx=-4.5),
                                      MotionSpec("rotate", theta=0.3), MotionSpec("zoom", scale=1.3),
                                      MotionSpec("zoom", scale=0.7), MotionSpec("spin")])
    def test_out_of_bounds(self, spec):
        with pytest.raises(InvalidInputError):
            render_clip(spec, 2, 8, 8, 0)

    @pytest.mark.parametrize("spec", [MotionSpec("translate", ty=1.5, tx=-2.25),
                                      MotionSpec("rotate", theta=-0.05),
                                      MotionSpec("zoom", scale=1.04)])
    def test_determinism(self, spec):
        a, fa = render_clip(spec, 4, 32, 32, 11)
        b, fb = render_clip(spec, 4, 32, 32, 11)
        assert a.frames.tobytes() == b.frames.tobytes()
        assert all((x.grid == y.grid).all() for x, y in zip(fa, fb))


class TestPhotometricConsistency:
    @pytest.mark.parametrize("spec", [MotionSpec("translate", ty=0.5, tx=1.25),
                                      MotionSpec("translate", ty=-3, tx=2),
                                      MotionSpec("rotate", theta=0.1),
                                      MotionSpec("zoom", scale=0.9),
                                      MotionSpec("zoom", scale=1.2)])
    def test_flow_reproduces_next_frame(self, spec):
        H = W = 64
        clip, flows = render_clip(spec, 3, H, W, 4)
        yy, xx = np.mgrid[0:H, 0:W].astype(float)
        for t in range(1, 3):
            prev, cur, f = clip.frames[t - 1], clip.frames[t], flows[t - 1].grid
            # invert the flow by fixed-point iteration: q + flow(q) = p
            qy, qx = yy.copy(), xx.copy()
            for _ in range(60):
                step = bilinear_sample(f, qy, qx)
                qy, qx = yy - step[..., 0], xx - step[..., 1]
            predicted = bilinear_sample(prev, qy, qx)
            inner = (yy >= 4) & (yy < H - 4) & (xx >= 4) & (xx < W - 4)
            inner &= (qy >= 0) & (qy <= H - 1) & (qx >= 0) & (qx <= W - 1)
            assert np.abs(predicted - cur)[inner].mean() <= 2.0

class TestCompose:
    def test_translation_doubles(self):
        _, flows = render_clip(MotionSpec("translate", ty=1.5, tx=-0.5), 3, 16, 16, 0)
        np.testing.assert_allclose(compose_flows(flows).grid, 2 * flows[0].grid)

    def test_single_is_identity(self):
        f = MotionSpec("zoom", scale=1.1).flow(8, 8)
        np.testing.assert_allclose(compose_flows([f]).grid, f.grid)


class TestEndpointError:
    def test_equal(self):
        f = MotionSpec("rotate", theta=0.1).flow(8, 8)
        assert endpoint_error(f, f) == 0.0

    @pytest.mark.parametrize("offset,expected", [((0, 1), 1.0), ((3, 4), 5.0)])
    def test_constant_offset(self, offset, expected):
        f = MotionSpec("rotate", theta=0.1).flow(8, 8)
        assert endpoint_error(DenseFlow(f.grid + offset), f) == pytest.approx(expected)

    def test_nonnegative(self, rng):
        a, b = rng.standard_normal((2, 6, 7, 2))
        assert endpoint_error(DenseFlow(a), DenseFlow(b)) > 0

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            endpoint_error(DenseFlow(np.zeros((4, 4, 2))), DenseFlow(np.zeros((4, 5, 2))))


class TestWarp:
    def test_integer_translation_is_shift(self):
        t = texture(16, 16, 2)
        out = warp(t, MotionSpec("translate", ty=1, tx=2))
        np.testing.assert_array_equal(out[1:, 2:], t[:-1, :-2])

    def test_dense_flow_rejects_bad_shape(self):
        with pytest.raises(InvalidInputError):
            DenseFlow(np.zeros((4, 4, 3)))

    def test_check_rejects_nan(self):
        g = np.zeros((4, 4, 2))
        g[0, 0, 0] = np.nan
        with pytest.raises(InvalidInputError):
            DenseFlow(g).check()
