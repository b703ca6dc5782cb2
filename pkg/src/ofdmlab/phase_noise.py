"""Oscillator phase noise models: white Gaussian, PSD-shaped, and Wiener.

The PSD model combines a PLL-bandwidth-limited Lorentzian, a 1/f corner
term and a white floor:

    L(f) = B^2 L0 / (B^2 + f^2) * (1 + f_corner / f) + L_floor

with L0 and L_floor given in dBc/Hz. The standard deviation assigned to a
PSD is the square root of the one-sided integral of L(f) from 1 Hz to B.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import InvalidArgumentError, NumericsError

PN_SIGMA_FMIN_HZ = 1.0


@dataclass(frozen=True)
class PnPsdParams:
    """Parameters of the shaped phase-noise PSD."""

    b_pll_hz: float
    l0_dbc: float
    f_corner_hz: float
    l_floor_dbc: float

    def __post_init__(self):
        if self.b_pll_hz <= PN_SIGMA_FMIN_HZ:
            raise InvalidArgumentError("PLL bandwidth must exceed the 1 Hz lower limit")
        if self.f_corner_hz <= 0:
            raise InvalidArgumentError("corner frequency must be positive")

    def level(self, f) -> np.ndarray:
        """One-sided PSD in rad^2/Hz at frequency offset ``f`` (Hz, > 0)."""
        f = np.asarray(f, dtype=float)
        b2 = self.b_pll_hz**2
        l0 = 10.0 ** (self.l0_dbc / 10.0)
        floor = 10.0 ** (self.l_floor_dbc / 10.0)
        return b2 * l0 / (b2 + f**2) * (1.0 + self.f_corner_hz / f) + floor


# Preset oscillator profiles of increasing severity, keyed by set number.
# The label is the integrated standard deviation each profile is quoted at.
PSD_PRESETS: dict[int, tuple[PnPsdParams, float]] = {
    1: (PnPsdParams(1e7, -95.0, 1e3, -150.0), 2.78),
    2: (PnPsdParams(4e7, -95.0, 1e3, -150.0), 5.46),
    3: (PnPsdParams(4e7, -89.0, 1e3, -150.0), 10.85),
}


@dataclass
class PnSequence:
    """A realized phase trajectory (radians) with its model tag and std in degrees."""

    phases: np.ndarray
    model: str
    sigma_deg: float

    def __len__(self) -> int:
        return self.phases.size


def pn_sigma_from_psd(params: PnPsdParams, f_min: float = PN_SIGMA_FMIN_HZ) -> float:
    """Std in degrees from the one-sided PSD integral over [f_min, B].

    Integrates on a log-frequency axis; the quadrature is checked against
    its own error estimate.
    """
    lo, hi = np.log(f_min), np.log(params.b_pll_hz)
    corner = np.log(params.f_corner_hz)
    breaks = [corner] if np.isfinite(lo) and lo < corner < hi else None
    var, err = integrate.quad(
        lambda u: params.level(np.exp(u)) * np.exp(u),
        lo,
        hi,
        limit=200,
        epsrel=1e-10,
        points=breaks,
    )
    if not np.isfinite(var) or var <= 0 or err > 1e-5 * var:
        raise NumericsError(f"phase-noise PSD quadrature failed (value {var}, err {err})")
    return float(np.degrees(np.sqrt(var)))


def gen_gaussian_pn(sigma_deg: float, n: int, rng: np.random.Generator) -> PnSequence:
    """Independent zero-mean Gaussian phase per sample."""
    if sigma_deg < 0:
        raise InvalidArgumentError("sigma_deg must be non-negative")
    if n <= 0:
        raise InvalidArgumentError("sequence length must be positive")
    phases = np.radians(sigma_deg) * rng.standard_normal(n)
    return PnSequence(phases=phases, model="gaussian", sigma_deg=float(sigma_deg))


def gen_psd_pn(
    params: PnPsdParams,
    n: int,
    sample_rate: float,
    rng: np.random.Generator,
    target_sigma_deg: float | None = None,
) -> PnSequence:
    """Colored phase noise synthesized in the frequency domain.

    Positive-frequency bins get circular Gaussian coefficients scaled by
    sqrt(L(f_k)); the DC bin is zero and Hermitian symmetry keeps the
    sequence real. With ``target_sigma_deg`` the realized sequence is
    rescaled exactly to that standard deviation, preserving the spectral
    shape while pinning the total power.
    """
    if n <= 1:
        raise InvalidArgumentError("PSD synthesis needs at least 2 samples")
    if sample_rate <= 0:
        raise InvalidArgumentError("sample_rate must be positive")
    half = n // 2
    freqs = np.arange(1, half + 1) * (sample_rate / n)
    amp = np.sqrt(params.level(freqs) * sample_rate * n / 2.0)
    coeff = np.zeros(half + 1, dtype=np.complex128)
    coeff[1:] = amp * (rng.standard_normal(half) + 1j * rng.standard_normal(half)) / np.sqrt(2.0)
    if n % 2 == 0:
        # The real Nyquist bin enters the inverse transform once, not twice,
        # so it carries double power to keep the per-bin variance right.
        coeff[half] = 2.0 * coeff[half].real
    phases = np.fft.irfft(coeff, n)

    if target_sigma_deg is not None:
        if target_sigma_deg < 0:
            raise InvalidArgumentError("target_sigma_deg must be non-negative")
        cur = phases.std()
        if cur > 0:
            phases = phases * (np.radians(target_sigma_deg) / cur)
        else:
            phases = np.zeros_like(phases)
        sigma = float(target_sigma_deg)
    else:
        sigma = float(np.degrees(phases.std()))
    return PnSequence(phases=phases, model="psd", sigma_deg=sigma)


def gen_wiener_pn(beta_hz: float, n: int, sample_rate: float, rng: np.random.Generator) -> PnSequence:
    """Random-walk phase with increment variance 2*pi*beta/sample_rate."""
    if beta_hz < 0:
        raise InvalidArgumentError("beta_hz must be non-negative")
    if n <= 0:
        raise InvalidArgumentError("sequence length must be positive")
    if sample_rate <= 0:
        raise InvalidArgumentError("sample_rate must be positive")
    steps = np.sqrt(2.0 * np.pi * beta_hz / sample_rate) * rng.standard_normal(n)
    steps[0] = 0.0
    phases = np.cumsum(steps)
    return PnSequence(phases=phases, model="wiener", sigma_deg=float(np.degrees(phases.std())))
