"""Shared numerical primitives: transforms, circular operations, sparse grids,
spline interpolation and seeded random streams.

All DFTs in this package are unitary (1/sqrt(N) on both directions) so that
Parseval holds without bookkeeping factors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline

from .errors import InvalidArgumentError


def dft(v: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unitary DFT of a 1-D vector (or of each column when ``v`` is 2-D)."""
    v = np.asarray(v)
    if v.size == 0:
        raise InvalidArgumentError("dft of an empty vector")
    if inverse:
        return np.fft.ifft(v, axis=0, norm="ortho")
    return np.fft.fft(v, axis=0, norm="ortho")


def idft(v: np.ndarray) -> np.ndarray:
    return dft(v, inverse=True)


def circular_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Circular convolution of two equal-length vectors via the FFT.

    result[n] = sum_k a[k] * b[(n - k) mod N]
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise InvalidArgumentError(
            f"circular_convolve needs equal-length 1-D vectors, got {a.shape} and {b.shape}"
        )
    if a.size == 0:
        raise InvalidArgumentError("circular_convolve of empty vectors")
    return np.fft.ifft(np.fft.fft(a) * np.fft.fft(b))


def circulant_matvec(first_column: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multiply the circulant matrix defined by its first column with ``x``.

    The matrix is materialized explicitly; this is the O(N^2) reference path,
    deliberately independent of the FFT route in :func:`circular_convolve`.
    """
    c = np.asarray(first_column)
    x = np.asarray(x)
    if c.ndim != 1 or x.ndim != 1 or c.shape != x.shape:
        raise InvalidArgumentError(
            f"circulant_matvec needs equal-length 1-D vectors, got {c.shape} and {x.shape}"
        )
    n = c.size
    if n == 0:
        raise InvalidArgumentError("circulant_matvec of empty vectors")
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return c[idx] @ x


def bessel_j0(x):
    """Bessel function of the first kind, order zero."""
    return special.j0(x)


def rng_stream(seed: int, stream=0) -> np.random.Generator:
    """Deterministic, independent random stream for (seed, stream).

    ``stream`` may be an int or a tuple of ints; distinct streams derived from
    the same seed are statistically independent.
    """
    if isinstance(stream, (int, np.integer)):
        stream = (int(stream),)
    else:
        stream = tuple(int(s) for s in stream)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=stream))


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples with total variance ``var``."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass
class SparseGrid:
    """A complex Nc x Ns grid observed only where ``mask`` is True.

    ``values`` is zero off-mask by construction.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise InvalidArgumentError(
                f"SparseGrid values {self.values.shape} and mask {self.mask.shape} must be equal 2-D shapes"
            )
        if np.any(self.values[~self.mask] != 0):
            raise InvalidArgumentError("SparseGrid has nonzero entries off the mask")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class SplineResult:
    """Dense grid from spline interpolation plus a status tag.

    ``status`` is "ok" for the regular two-stage path, or names the 1-D
    fallback used when the observed points are collinear.
    """

    grid: np.ndarray
    status: str = "ok"


def _spline_eval(xs: np.ndarray, ys: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Natural cubic spline through (xs, ys), evaluated at ``at``.

    ``ys`` may be complex and may carry extra trailing axes. A single point
    degenerates to a constant.
    """
    if xs.size == 1:
        return np.broadcast_to(ys[0], (at.size,) + ys.shape[1:]).copy()
    return CubicSpline(xs, ys, axis=0, bc_type="natural")(at)


def spline_interpolate_2d(sparse: SparseGrid) -> SplineResult:
    """Complete a sparse grid with separable natural cubic splines.

    First pass runs along the frequency axis within each observed symbol,
    second pass along the time axis. Evaluation coordinates are clamped to
    the bounding box of the observations, so values outside the observed
    hull are held rather than extrapolated. Real and imaginary parts are
    interpolated independently.
    """
    nc, ns = sparse.shape
    rows, cols = np.nonzero(sparse.mask)
    if rows.size < 4:
        raise InvalidArgumentError(
            f"spline interpolation needs at least 4 observed points, got {rows.size}"
        )
    uniq_rows = np.unique(rows)
    uniq_cols = np.unique(cols)

    if uniq_cols.size < 2:
        # All observations share one symbol: interpolate along frequency only.
        c = uniq_cols[0]
        order = np.argsort(rows)
        at = np.clip(np.arange(nc), rows.min(), rows.max())
        profile = _spline_eval(rows[order].astype(float), sparse.values[rows[order], c], at)
        return SplineResult(np.repeat(profile[:, None], ns, axis=1), status="1d_frequency")
    if uniq_rows.size < 2:
        # All observations share one subcarrier: interpolate along time only.
        r = uniq_rows[0]
        order = np.argsort(cols)
        at = np.clip(np.arange(ns), cols.min(), cols.max())
        profile = _spline_eval(cols[order].astype(float), sparse.values[r, cols[order]], at)
        return SplineResult(np.repeat(profile[None, :], nc, axis=0), status="1d_time")

    row_at = np.clip(np.arange(nc), rows.min(), rows.max()).astype(float)
    col_at = np.clip(np.arange(ns), cols.min(), cols.max()).astype(float)

    # Stage 1: a full frequency profile for every symbol that has pilots.
    profiles = np.empty((nc, uniq_cols.size), dtype=np.complex128)
    for j, c in enumerate(uniq_cols):
        r_c = rows[cols == c]
        r_c.sort()
        profiles[:, j] = _spline_eval(r_c.astype(float), sparse.values[r_c, c], row_at)

    # Stage 2: interpolate each subcarrier across those symbols.
    grid = _spline_eval(uniq_cols.astype(float), profiles.T, col_at).T
    return SplineResult(np.ascontiguousarray(grid), status="ok")
