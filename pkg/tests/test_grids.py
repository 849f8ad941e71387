"""Unit tests for the differentiable grid arrays."""

import numpy as np
import pytest

from din import (GridArray, apply_nonlinearity, bake_nonlinearity,
                 grad_cells, grad_coords, init_identity_ramp, interpolate,
                 nonlinearity_deriv, quantize8)


def make_random_array(rng, dims=None, nonlinearity="none", dtype=np.float64,
                      lo=0.1, hi=0.9):
    d = dims or int(rng.integers(1, 5))
    shape = tuple(int(n) for n in rng.integers(2, 6, d))
    channels = int(rng.integers(1, 4))
    a = GridArray(shape, channels, nonlinearity, sine_n=2.0, dtype=dtype)
    a.cells[:] = rng.uniform(lo, hi, a.cells.shape)
    return a


def interior_query(rng, array, margin=1e-3):
    """Random query kept away from grid planes so FD stays one-sided-free."""
    x = rng.uniform(0.05, 0.95, array.dims)
    for j, n in enumerate(array.shape):
        u = x[j] * (n - 1)
        if abs(u - round(u)) < margin:
            x[j] += 10 * margin
    return x


class TestInterpolate:
    def test_linear_midpoint(self):
        a = GridArray((2,), 1)
        a.cells[:, 0] = [0.0, 1.0]
        assert interpolate(a, [0.5])[0] == pytest.approx(0.5)

    def test_identity_ramp_returns_input(self):
        rng = np.random.default_rng(3)
        a = GridArray((6, 4), 2, dtype=np.float64)
        init_identity_ramp(a)
        x = rng.random((50, 2))
        assert np.abs(interpolate(a, x) - x).max() < 1e-6

    def test_three_vertex_oracle(self):
        # u = 0.75 * 2 = 1.5 -> midpoint of cells 1 and 2
        a = GridArray((3,), 1)
        a.cells[:, 0] = [0.0, 0.9, 0.3]
        assert interpolate(a, [0.75])[0] == pytest.approx(0.6)

    def test_scalar_multilinear_oracle_random(self):
        # independent recursive-lerp oracle on random 3D arrays
        def lerp_oracle(values, x, shape):
            # values indexed [i][j][k] -> scalar; recursive 1-D lerps
            def rec(axis, idx):
                n = shape[axis]
                u = min(max(x[axis] * (n - 1), 0.0), n - 1)
                i0 = min(int(np.floor(u)), n - 2)
                f = u - i0
                if axis == len(shape) - 1:
                    lo = values[tuple(idx + [i0])]
                    hi = values[tuple(idx + [i0 + 1])]
                else:
                    lo = rec(axis + 1, idx + [i0])
                    hi = rec(axis + 1, idx + [i0 + 1])
                return (1 - f) * lo + f * hi

            # reorder: lerp axis 0 last for clarity
            def rec0(axis, idx):
                return rec(axis, idx)

            return rec0(0, [])

        rng = np.random.default_rng(11)
        for _ in range(5):
            a = make_random_array(rng, dims=3)
            x = rng.random(3)
            got = interpolate(a, x)
            for c in range(a.channels):
                want = lerp_oracle(a.cells[..., c], x, a.shape)
                assert got[c] == pytest.approx(want, abs=1e-12)

    def test_partition_of_unity_constant(self):
        rng = np.random.default_rng(4)
        a = GridArray((3, 4, 2), 2, dtype=np.float64)
        a.cells[:] = 0.37
        x = rng.random((100, 3))
        assert np.abs(interpolate(a, x) - 0.37).max() < 1e-12

    def test_vertex_exactness(self):
        rng = np.random.default_rng(5)
        a = make_random_array(rng, dims=2, nonlinearity="triangle")
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                x = [i / (a.shape[0] - 1), j / (a.shape[1] - 1)]
                want = apply_nonlinearity("triangle", a.cells[i, j])
                assert np.abs(interpolate(a, x) - want).max() < 1e-12

    def test_bounded_with_periodic_nonlinearity(self):
        rng = np.random.default_rng(6)
        for nl in ("triangle", "sine"):
            a = make_random_array(rng, nonlinearity=nl, lo=-5, hi=5)
            out = interpolate(a, rng.random((200, a.dims)))
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_dimension_mismatch_raises(self):
        a = GridArray((2, 2), 1)
        with pytest.raises(ValueError):
            interpolate(a, [0.5])

    def test_nan_coordinate_raises(self):
        a = GridArray((2, 2), 1)
        with pytest.raises(ValueError):
            interpolate(a, [0.5, float("nan")])


class TestGradCoords:
    def test_constant_array_zero_gradient(self):
        a = GridArray((3, 3), 2, dtype=np.float64)
        a.cells[:] = 0.8
        g = grad_coords(a, [0.3, 0.6])
        assert np.abs(g).max() == 0.0

    def test_unit_slope_line(self):
        a = GridArray((2,), 1, dtype=np.float64)
        a.cells[:, 0] = [0.0, 1.0]
        for x in (0.1, 0.5, 0.9):
            assert grad_coords(a, [x])[0, 0] == pytest.approx(1.0)

    def test_finite_difference_oracle_3d(self):
        rng = np.random.default_rng(7)
        h = 1e-4
        for _ in range(10):
            a = make_random_array(rng, dims=3)
            x = interior_query(rng, a)
            g = grad_coords(a, x)
            for j in range(3):
                xp, xm = x.copy(), x.copy()
                xp[j] += h
                xm[j] -= h
                fd = (interpolate(a, xp) - interpolate(a, xm)) / (2 * h)
                rel = np.abs(fd - g[:, j]) / np.maximum(np.abs(fd), 1e-3)
                assert rel.max() < 1e-5


class TestGradCells:
    def test_vertex_query_hits_one_cell(self):
        a = GridArray((3, 3), 1, dtype=np.float64)
        a.cells[:] = 0.5
        buf = a.zeros_grad()
        grad_cells(a, [0.5, 0.5], np.array([1.0]), buf)
        assert buf[1, 1, 0] == pytest.approx(1.0)
        assert np.abs(buf).sum() == pytest.approx(1.0)

    def test_midpoint_splits_evenly(self):
        a = GridArray((2,), 1, dtype=np.float64)
        buf = a.zeros_grad()
        grad_cells(a, [0.5], np.array([1.0]), buf)
        assert buf[:, 0] == pytest.approx([0.5, 0.5])

    def test_finite_difference_oracle_triangle(self):
        rng = np.random.default_rng(8)
        h = 1e-4
        for _ in range(5):
            a = make_random_array(rng, dims=2, nonlinearity="triangle")
            x = interior_query(rng, a)
            up = rng.standard_normal(a.channels)
            buf = a.zeros_grad()
            grad_cells(a, x, up, buf)
            flat = a.cells.reshape(-1, a.channels)
            bflat = buf.reshape(-1, a.channels)
            for i, c in np.argwhere(np.abs(bflat) > 1e-12):
                orig = flat[i, c]
                flat[i, c] = orig + h
                fp = interpolate(a, x) @ up
                flat[i, c] = orig - h
                fm = interpolate(a, x) @ up
                flat[i, c] = orig
                fd = (fp - fm) / (2 * h)
                assert abs(fd - bflat[i, c]) < 1e-5 * max(abs(fd), 1e-3)

    def test_shape_mismatch_raises(self):
        a = GridArray((2, 2), 1)
        with pytest.raises(ValueError):
            grad_cells(a, [0.5, 0.5], np.array([1.0]), np.zeros((3, 3, 1)))


class TestNonlinearity:
    def test_triangle_peak(self):
        assert apply_nonlinearity("triangle", 1.0) == pytest.approx(1.0)

    def test_triangle_zeros(self):
        assert apply_nonlinearity("triangle", 0.0) == pytest.approx(0.0)
        assert apply_nonlinearity("triangle", 2.0) == pytest.approx(0.0)

    def test_direct_formula_values(self):
        assert apply_nonlinearity("triangle", -0.5) == pytest.approx(0.5)
        assert apply_nonlinearity("sine", 0.0, sine_n=1.0) == \
            pytest.approx(0.5)

    def test_triangle_derivative_breakpoints(self):
        # fixed left-segment (rising) choice at both breakpoints
        assert nonlinearity_deriv("triangle", 0.0) == 1.0
        assert nonlinearity_deriv("triangle", 1.0) == 1.0
        assert nonlinearity_deriv("triangle", 1.5) == -1.0

    def test_range(self):
        v = np.linspace(-7, 7, 1001)
        for nl in ("triangle", "sine"):
            out = apply_nonlinearity(nl, v, sine_n=3.0)
            assert out.min() >= 0.0 and out.max() <= 1.0


class TestIdentityRamp:
    def test_1d_values(self):
        a = GridArray((5,), 1)
        init_identity_ramp(a)
        assert a.cells[:, 0] == pytest.approx([0, 0.25, 0.5, 0.75, 1.0])

    def test_2d_four_channels_repeat(self):
        a = GridArray((3, 3), 4, dtype=np.float64)
        init_identity_ramp(a)
        assert np.array_equal(a.cells[..., 0], a.cells[..., 2])
        assert np.array_equal(a.cells[..., 1], a.cells[..., 3])
        assert a.cells[2, 0, 0] == pytest.approx(1.0)  # x channel
        assert a.cells[2, 0, 1] == pytest.approx(0.0)  # y channel

    def test_identity_property(self):
        rng = np.random.default_rng(9)
        a = GridArray((7, 5, 3), 3, "triangle", dtype=np.float64)
        init_identity_ramp(a)
        x = rng.random((1000, 3))
        assert np.abs(interpolate(a, x) - x).max() <= 1e-6


class TestBake:
    def test_all_ones_triangle(self):
        a = GridArray((2, 2), 1, "triangle")
        a.cells[:] = 1.0
        assert np.all(bake_nonlinearity(a).cells == 1.0)

    def test_value_three_maps_to_one(self):
        # mod(3, 2) = 1 -> triangle peak
        a = GridArray((2,), 1, "triangle")
        a.cells[:] = 3.0
        assert np.all(bake_nonlinearity(a).cells == pytest.approx(1.0))

    def test_bake_preserves_interpolation_bitwise(self):
        rng = np.random.default_rng(10)
        a = make_random_array(rng, nonlinearity="sine", lo=-3, hi=3)
        baked = bake_nonlinearity(a)
        x = rng.random((100, a.dims))
        assert np.array_equal(interpolate(a, x), interpolate(baked, x))

    def test_bake_none_raises(self):
        with pytest.raises(ValueError):
            bake_nonlinearity(GridArray((2,), 1))


class TestQuantize8:
    def test_constant_half_codes(self):
        a = GridArray((2, 2), 1, "triangle")
        a.cells[:] = np.pi / 2  # triangle(pi/2) != 0.5; use plain value
        a = GridArray((2, 2), 1)
        a.cells[:] = 0.5
        q = quantize8(a, range_01=True)
        assert np.all(q.codes == 128)
        assert q.qoffset[0] == 0.0 and q.qscale[0] == 1.0
        assert q.cells[0, 0, 0] == pytest.approx(128 / 255)

    def test_endpoints_roundtrip(self):
        a = GridArray((2,), 1)
        a.cells[:, 0] = [0.0, 1.0]
        q = quantize8(a, range_01=True)
        assert list(q.codes[:, 0]) == [0, 255]
        assert np.array_equal(q.cells, a.cells)

    def test_degenerate_range(self):
        a = GridArray((2,), 1)
        a.cells[:] = 0.7
        q = quantize8(a)
        assert np.all(q.codes == 0)
        assert q.qscale[0] == 0.0
        assert q.cells[0, 0] == pytest.approx(0.7)

    def test_within_one_step(self):
        rng = np.random.default_rng(12)
        a = make_random_array(rng, lo=-2.0, hi=3.0)
        q = quantize8(a)
        flat = a.cells.reshape(-1, a.channels)
        span = flat.max(axis=0) - flat.min(axis=0)
        err = np.abs(q.cells - a.cells).reshape(-1, a.channels)
        assert np.all(err <= span / 255 + 1e-6)

    def test_periodic_bakes_first(self):
        rng = np.random.default_rng(13)
        a = make_random_array(rng, nonlinearity="triangle", lo=-3, hi=3)
        q = quantize8(a)
        assert q.nonlinearity == "none"
        x = rng.random((50, a.dims))
        assert np.abs(interpolate(q, x) - interpolate(a, x)).max() < 1 / 255
