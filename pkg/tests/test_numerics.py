"""Tests for the shared numerical primitives."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ofdmlab.errors import InvalidArgumentError
from ofdmlab.numerics import (
    SparseGrid,
    bessel_j0,
    circular_convolve,
    circulant_matvec,
    complex_normal,
    dft,
    idft,
    rng_stream,
    spline_interpolate_2d,
)


def _random_complex(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


class TestDft:
    def test_round_trip(self):
        rng = rng_stream(1, 0)
        v = _random_complex(rng, 64)
        assert_allclose(idft(dft(v)), v, atol=1e-12)

    def test_parseval(self):
        rng = rng_stream(2, 0)
        v = _random_complex(rng, 72)
        assert np.isclose(np.linalg.norm(dft(v)), np.linalg.norm(v))

    def test_unitary_scaling(self):
        # A delta transforms to a constant 1/sqrt(N) line.
        delta = np.zeros(16)
        delta[0] = 1.0
        assert_allclose(dft(delta), np.full(16, 1.0 / 4.0), atol=1e-14)

    def test_columns_are_independent(self):
        rng = rng_stream(3, 0)
        m = _random_complex(rng, (12, 5))
        full = dft(m)
        for j in range(5):
            assert_allclose(full[:, j], dft(m[:, j]), atol=1e-13)

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            dft(np.array([]))


class TestCircularConvolve:
    def test_hand_example(self):
        # result[n] = sum_k a[k] b[(n-k) mod 3], worked out by hand.
        out = circular_convolve(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0]))
        assert_allclose(out.real, [31.0, 31.0, 28.0], atol=1e-12)
        assert_allclose(out.imag, 0.0, atol=1e-12)

    def test_matches_circulant_matrix_route(self):
        # The O(N^2) explicit-matrix path is an independent implementation.
        rng = rng_stream(4, 0)
        for n in (1, 2, 7, 64):
            a = _random_complex(rng, n)
            b = _random_complex(rng, n)
            assert_allclose(circular_convolve(a, b), circulant_matvec(b, a), atol=1e-10)
            # and convolution commutes
            assert_allclose(circular_convolve(a, b), circular_convolve(b, a), atol=1e-10)

    def test_convolution_theorem(self):
        # With unitary transforms: DFT(a conv b) = sqrt(N) DFT(a) DFT(b).
        rng = rng_stream(5, 0)
        a = _random_complex(rng, 24)
        b = _random_complex(rng, 24)
        lhs = dft(circular_convolve(a, b))
        rhs = np.sqrt(24) * dft(a) * dft(b)
        assert_allclose(lhs, rhs, atol=1e-11)

    def test_identity_element(self):
        rng = rng_stream(6, 0)
        a = _random_complex(rng, 9)
        delta = np.zeros(9)
        delta[0] = 1.0
        assert_allclose(circular_convolve(a, delta), a, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            circular_convolve(np.ones(3), np.ones(4))
        with pytest.raises(InvalidArgumentError):
            circular_convolve(np.ones((2, 2)), np.ones((2, 2)))
        with pytest.raises(InvalidArgumentError):
            circular_convolve(np.array([]), np.array([]))
        with pytest.raises(InvalidArgumentError):
            circulant_matvec(np.ones(3), np.ones(5))


class TestBesselJ0:
    def test_against_power_series(self):
        # J0(x) = sum_m (-1)^m (x/2)^(2m) / (m!)^2; the series converges fast
        # for the arguments the Doppler model ever sees.
        x = np.linspace(0.0, 10.0, 41)
        acc = np.zeros_like(x)
        term = np.ones_like(x)
        for m in range(1, 40):
            acc += term
            term = -term * (x / 2.0) ** 2 / m**2
        assert_allclose(bessel_j0(x), acc, rtol=1e-12, atol=1e-12)

    def test_known_values(self):
        assert bessel_j0(0.0) == 1.0
        # first zero of J0 is near 2.404826
        assert abs(bessel_j0(2.404826)) < 1e-5


class TestRngStream:
    def test_reproducible(self):
        a = rng_stream(42, 7).standard_normal(8)
        b = rng_stream(42, 7).standard_normal(8)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        a = rng_stream(42, 0).standard_normal(8)
        b = rng_stream(42, 1).standard_normal(8)
        c = rng_stream(43, 0).standard_normal(8)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_int_equals_singleton_tuple(self):
        a = rng_stream(7, 3).standard_normal(4)
        b = rng_stream(7, (3,)).standard_normal(4)
        assert np.array_equal(a, b)

    def test_tuple_streams(self):
        a = rng_stream(7, (1, 2)).standard_normal(4)
        b = rng_stream(7, (2, 1)).standard_normal(4)
        assert not np.array_equal(a, b)


def test_complex_normal_moments():
    rng = rng_stream(8, 0)
    z = complex_normal(rng, 200_000, var=3.0)
    assert np.isclose(np.mean(np.abs(z) ** 2), 3.0, rtol=0.02)
    # circular symmetry: equal power in both parts, no correlation
    assert np.isclose(np.var(z.real), 1.5, rtol=0.03)
    assert np.isclose(np.var(z.imag), 1.5, rtol=0.03)
    assert abs(np.mean(z.real * z.imag)) < 0.02


class TestSparseGrid:
    def test_basic(self):
        mask = np.zeros((4, 3), dtype=bool)
        mask[1, 2] = True
        values = np.zeros((4, 3), dtype=complex)
        values[1, 2] = 2.0 - 1.0j
        grid = SparseGrid(values=values, mask=mask)
        assert grid.shape == (4, 3)

    def test_nonzero_off_mask_rejected(self):
        mask = np.zeros((2, 2), dtype=bool)
        values = np.ones((2, 2), dtype=complex)
        with pytest.raises(InvalidArgumentError):
            SparseGrid(values=values, mask=mask)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            SparseGrid(values=np.zeros((2, 2)), mask=np.zeros((2, 3), dtype=bool))
        with pytest.raises(InvalidArgumentError):
            SparseGrid(values=np.zeros(4), mask=np.zeros(4, dtype=bool))


def _diamond_mask(nc, ns, sf, st):
    mask = np.zeros((nc, ns), dtype=bool)
    mask[::sf, ::st] = True
    mask[sf // 2 :: sf, st // 2 :: st] = True
    return mask


class TestSplineInterpolate2d:
    def test_constant_grid_recovered(self):
        mask = _diamond_mask(24, 10, 4, 3)
        values = np.where(mask, 2.0 - 0.5j, 0.0)
        res = spline_interpolate_2d(SparseGrid(values=values, mask=mask))
        assert res.status == "ok"
        assert_allclose(res.grid, np.full((24, 10), 2.0 - 0.5j), atol=1e-9)

    def test_linear_ramp_recovered_inside_hull(self):
        # Natural cubic splines reproduce straight lines exactly, and the
        # staggered mask still pins every evaluated coordinate to the span
        # covered by observations.
        nc, ns = 24, 12
        mask = _diamond_mask(nc, ns, 4, 3)
        rr, cc = np.meshgrid(np.arange(nc), np.arange(ns), indexing="ij")
        field = 0.25 * rr - 0.1 * cc + 1.0 + 1j * (0.05 * rr + 0.2 * cc)
        values = np.where(mask, field, 0.0)
        res = spline_interpolate_2d(SparseGrid(values=values, mask=mask))
        rows, cols = np.nonzero(mask)
        r_lo, r_hi = rows.min(), rows.max()
        c_lo, c_hi = cols.min(), cols.max()
        inside = (rr >= r_lo) & (rr <= r_hi) & (cc >= c_lo) & (cc <= c_hi)
        assert_allclose(res.grid[inside], field[inside], atol=1e-8)

    def test_outside_hull_is_held(self):
        # No observations before row 3: rows 0..3 all evaluate at row 3.
        mask = np.zeros((10, 6), dtype=bool)
        mask[3::2, 0] = True
        mask[3::2, 5] = True
        rng = rng_stream(9, 0)
        field = rng.standard_normal((10, 6)) + 1j * rng.standard_normal((10, 6))
        values = np.where(mask, field, 0.0)
        res = spline_interpolate_2d(SparseGrid(values=values, mask=mask))
        for r in (0, 1, 2):
            assert_allclose(res.grid[r], res.grid[3], atol=1e-12)

    def test_single_symbol_falls_back_to_frequency_profile(self):
        mask = np.zeros((12, 5), dtype=bool)
        mask[[0, 4, 8, 11], 2] = True
        values = np.zeros((12, 5), dtype=complex)
        values[[0, 4, 8, 11], 2] = [1.0, 2.0, 3.0, 4.0]
        res = spline_interpolate_2d(SparseGrid(values=values, mask=mask))
        assert res.status == "1d_frequency"
        # every symbol carries the same interpolated profile
        for j in range(5):
            assert_allclose(res.grid[:, j], res.grid[:, 2], atol=1e-12)
        assert_allclose(res.grid[[0, 4, 8, 11], 0], [1.0, 2.0, 3.0, 4.0], atol=1e-12)

    def test_single_subcarrier_falls_back_to_time_profile(self):
        mask = np.zeros((12, 8), dtype=bool)
        mask[5, [0, 2, 5, 7]] = True
        values = np.zeros((12, 8), dtype=complex)
        values[5, [0, 2, 5, 7]] = [1.0, 1.5, 2.5, 3.0]
        res = spline_interpolate_2d(SparseGrid(values=values, mask=mask))
        assert res.status == "1d_time"
        for r in range(12):
            assert_allclose(res.grid[r], res.grid[5], atol=1e-12)

    def test_too_few_points_rejected(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[0, 0] = mask[4, 4] = mask[7, 7] = True
        values = np.where(mask, 1.0 + 0j, 0.0)
        with pytest.raises(InvalidArgumentError):
            spline_interpolate_2d(SparseGrid(values=values, mask=mask))

    def test_interpolates_observations_exactly(self):
        mask = _diamond_mask(16, 8, 4, 4)
        rng = rng_stream(10, 0)
        field = rng.standard_normal((16, 8)) + 1j * rng.standard_normal((16, 8))
        values = np.where(mask, field, 0.0)
        res = spline_interpolate_2d(SparseGrid(values=values, mask=mask))
        rows, cols = np.nonzero(mask)
        assert_allclose(res.grid[rows, cols], field[rows, cols], atol=1e-9)
