"""Doubly selective multipath channel: tapped delay line with Jakes-spectrum
time variation, generated by a sum-of-sinusoids scatterer model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .numerics import circular_convolve

# ITU-R vehicular-A power delay profile.
VEHA_DELAYS_NS = (0.0, 310.0, 710.0, 1090.0, 1730.0, 2510.0)
VEHA_POWERS_DB = (0.0, -1.0, -9.0, -10.0, -15.0, -20.0)

DEFAULT_SCATTERERS = 64


@dataclass(frozen=True)
class PowerDelayProfile:
    """Tap delays (ns) and powers (dB), delays strictly increasing from zero."""

    tap_delays_ns: tuple
    tap_powers_db: tuple

    def __post_init__(self):
        d = np.asarray(self.tap_delays_ns, dtype=float)
        p = np.asarray(self.tap_powers_db, dtype=float)
        if d.size == 0 or d.size != p.size:
            raise InvalidArgumentError("profile needs matching, nonempty delay and power lists")
        if d[0] < 0 or np.any(np.diff(d) <= 0):
            raise InvalidArgumentError("tap delays must be non-negative and strictly increasing")

    def linear_powers(self) -> np.ndarray:
        """Tap powers on a linear scale, normalized to unit total."""
        p = 10.0 ** (np.asarray(self.tap_powers_db, dtype=float) / 10.0)
        return p / p.sum()


def vehicular_a() -> PowerDelayProfile:
    return PowerDelayProfile(VEHA_DELAYS_NS, VEHA_POWERS_DB)


@dataclass(frozen=True)
class QuantizedPdp:
    """Delay profile mapped onto the sampling grid.

    ``tap_indices`` are distinct ascending sample offsets; ``tap_powers`` are
    linear, sum to one, with taps that landed on the same index merged.
    """

    tap_indices: tuple
    tap_powers: tuple
    sample_rate: float

    @property
    def num_taps(self) -> int:
        return len(self.tap_indices)

    @property
    def max_index(self) -> int:
        return self.tap_indices[-1]


def quantize_pdp(pdp: PowerDelayProfile, sample_rate: float) -> QuantizedPdp:
    """Round tap delays to the nearest sample and merge collisions."""
    if sample_rate <= 0:
        raise InvalidArgumentError(f"sample_rate must be positive, got {sample_rate}")
    delays_s = np.asarray(pdp.tap_delays_ns, dtype=float) * 1e-9
    idx = np.rint(delays_s * sample_rate).astype(int)
    powers = pdp.linear_powers()
    merged: dict[int, float] = {}
    for i, p in zip(idx, powers):
        merged[int(i)] = merged.get(int(i), 0.0) + float(p)
    indices = tuple(sorted(merged))
    total = sum(merged.values())
    return QuantizedPdp(
        tap_indices=indices,
        tap_powers=tuple(merged[i] / total for i in indices),
        sample_rate=sample_rate,
    )


@dataclass
class ChannelRealization:
    """Per-symbol tap gains of one subframe and the matching frequency response.

    ``taps`` is L x Ns (tap, OFDM symbol); ``freq_response`` is Nc x Ns.
    """

    taps: np.ndarray
    tap_indices: tuple
    freq_response: np.ndarray
    doppler_hz: float
    symbol_duration: float
    sample_rate: float


def frequency_response(taps: np.ndarray, tap_indices, nc: int) -> np.ndarray:
    """Nc-point frequency response of tap columns placed at their delay indices.

    With the unitary DFT convention this is sqrt(Nc) times the unitary
    transform of the zero-padded tap vector, i.e. the plain (non-normalized)
    DFT, so a unit-power profile keeps unit power per subcarrier.
    """
    taps = np.atleast_2d(np.asarray(taps, dtype=np.complex128))
    indices = np.asarray(tap_indices, dtype=int)
    if indices.size != taps.shape[0]:
        raise InvalidArgumentError("tap_indices length must match tap rows")
    if indices.max(initial=0) >= nc:
        raise InvalidArgumentError(
            f"tap index {indices.max()} does not fit an FFT of size {nc}"
        )
    padded = np.zeros((nc, taps.shape[1]), dtype=np.complex128)
    padded[indices, :] = taps
    return np.fft.fft(padded, axis=0)


def generate_channel(
    profile: QuantizedPdp,
    doppler_hz: float,
    ns: int,
    nc: int,
    symbol_duration: float,
    rng: np.random.Generator,
    scatterers: int = DEFAULT_SCATTERERS,
) -> ChannelRealization:
    """Draw one channel realization with block fading per OFDM symbol.

    Each tap is a sum of ``scatterers`` equal-power complex sinusoids with
    uniform random arrival angles and phases, giving the classical Jakes
    Doppler spectrum. Taps are evaluated at symbol centers.
    """
    if ns <= 0 or nc <= 0:
        raise InvalidArgumentError("ns and nc must be positive")
    if doppler_hz < 0:
        raise InvalidArgumentError("doppler_hz must be non-negative")
    if profile.max_index >= nc:
        raise InvalidArgumentError(
            f"quantized tap index {profile.max_index} exceeds the subcarrier count {nc}"
        )
    n_taps = profile.num_taps
    t = (np.arange(ns) + 0.5) * symbol_duration

    angles = rng.uniform(0.0, 2.0 * np.pi, size=(n_taps, scatterers))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_taps, scatterers))
    omega = 2.0 * np.pi * doppler_hz * np.cos(angles)
    arg = omega[:, :, None] * t[None, None, :] + phases[:, :, None]
    gains = np.exp(1j * arg).sum(axis=1) / np.sqrt(scatterers)
    taps = np.sqrt(np.asarray(profile.tap_powers))[:, None] * gains

    return ChannelRealization(
        taps=taps,
        tap_indices=tuple(profile.tap_indices),
        freq_response=frequency_response(taps, profile.tap_indices, nc),
        doppler_hz=doppler_hz,
        symbol_duration=symbol_duration,
        sample_rate=profile.sample_rate,
    )


def tap_column_padded(chan: ChannelRealization, symbol: int, nc: int) -> np.ndarray:
    """Time-domain tap vector of one symbol, zero-padded to length nc."""
    h = np.zeros(nc, dtype=np.complex128)
    h[list(chan.tap_indices)] = chan.taps[:, symbol]
    return h


def apply_channel(x_t: np.ndarray, h_padded: np.ndarray) -> np.ndarray:
    """Circularly convolve one symbol body with a padded tap vector."""
    return circular_convolve(h_padded, x_t)
