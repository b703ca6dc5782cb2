"""OFDM subframe assembly, transmit/receive chains and pilot handling.

Model per symbol body (cyclic prefix already removed):

    y_t = exp(j*phi_t) * (h (*) x_t + n_t)

with (*) circular convolution, unit-variance complex noise, and phase noise
applied after channel and noise. Pilot and data amplitudes carry the SNR:
noise power is fixed at one per complex sample.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .channel import ChannelRealization, tap_column_padded
from .errors import InvalidArgumentError
from .numerics import SparseGrid, circular_convolve, complex_normal, rng_stream
from .phase_noise import PnSequence

QPSK_POINTS = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)

# Per-axis Gray levels for 16-QAM, indexed by the two bits (msb, lsb):
# 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3, normalized to unit symbol energy.
_AXIS16 = np.array([-3.0, -1.0, 3.0, 1.0]) / np.sqrt(10.0)
# Inverse map: level rank (ascending) -> (msb, lsb).
_AXIS16_BITS = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)


@dataclass(frozen=True)
class FrameConfig:
    """Static dimensions and per-subframe SNR settings.

    ``data_snr_db`` is the per-data-symbol SNR (symbol energy over the unit
    noise power); sweeps specified per information bit convert through
    ``data_snr_from_ebn0``.
    """

    nc: int = 72
    ns: int = 14
    n_cp: int = 16
    mod_order: int = 4
    pilot_snr_db: float = 30.0
    data_snr_db: float = 30.0

    def __post_init__(self):
        if self.nc <= 0 or self.ns <= 0:
            raise InvalidArgumentError("nc and ns must be positive")
        if self.n_cp < 0 or self.n_cp > self.nc:
            raise InvalidArgumentError("n_cp must lie in [0, nc]")
        if self.mod_order not in (4, 16):
            raise InvalidArgumentError(f"unsupported modulation order {self.mod_order}")

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.mod_order))

    @property
    def symbol_len(self) -> int:
        return self.nc + self.n_cp

    @property
    def pilot_amp(self) -> float:
        return float(np.sqrt(10.0 ** (self.pilot_snr_db / 10.0)))

    @property
    def data_amp(self) -> float:
        return float(np.sqrt(10.0 ** (self.data_snr_db / 10.0)))


def data_snr_from_ebn0(eb_n0_db: float, mod_order: int) -> float:
    """Per-symbol data SNR in dB equivalent to an Eb/N0 point."""
    return float(eb_n0_db + 10.0 * np.log10(np.log2(mod_order)))


@dataclass(frozen=True)
class PilotPattern:
    """Diamond pilot lattice.

    ``positions`` holds (subcarrier, symbol) pairs: a base lattice starting
    at (0, 0) with spacings (sf, st), and a second lattice offset by half a
    spacing in both axes.
    """

    nc: int
    ns: int
    sf: int
    st: int
    positions: tuple

    @property
    def count(self) -> int:
        return len(self.positions)

    def mask(self) -> np.ndarray:
        m = np.zeros((self.nc, self.ns), dtype=bool)
        for k, i in self.positions:
            m[k, i] = True
        return m

    def symbols(self) -> tuple:
        """Pilot-bearing symbol indices, ascending."""
        return tuple(sorted({i for _, i in self.positions}))

    def subcarriers(self, symbol: int) -> np.ndarray:
        """Pilot subcarrier indices of one symbol, ascending."""
        return np.array(sorted(k for k, i in self.positions if i == symbol), dtype=int)


def build_pilot_pattern(nc: int, ns: int, sf: int, st: int) -> PilotPattern:
    if not (0 < sf <= nc) or not (0 < st <= ns):
        raise InvalidArgumentError(f"pilot spacings ({sf}, {st}) must fit the grid ({nc}, {ns})")
    positions = []
    for i in range(0, ns, st):
        positions.extend((k, i) for k in range(0, nc, sf))
    for i in range(ceil(st / 2), ns, st):
        positions.extend((k, i) for k in range(sf // 2, nc, sf))
    if not positions:
        raise InvalidArgumentError("pilot pattern is empty")
    # Unit spacings make the two lattices collide; keep each cell once.
    unique = sorted(set(positions), key=lambda p: (p[1], p[0]))
    return PilotPattern(nc=nc, ns=ns, sf=sf, st=st, positions=tuple(unique))


def data_positions(pattern: PilotPattern) -> tuple[np.ndarray, np.ndarray]:
    """(subcarrier, symbol) index arrays of data cells, in symbol-major order."""
    mask = pattern.mask()
    cols, rows = np.nonzero(~mask.T)
    return rows, cols


@dataclass
class Subframe:
    """One assembled subframe: the frequency grid and what was put on it."""

    x_f: np.ndarray
    data_bits: np.ndarray
    pilot_values: np.ndarray
    pattern: PilotPattern
    config: FrameConfig


def subframe_bit_count(pattern: PilotPattern, config: FrameConfig) -> int:
    return (config.nc * config.ns - pattern.count) * config.bits_per_symbol


def qam_map(bits: np.ndarray, mod_order: int) -> np.ndarray:
    """Gray-mapped unit-energy QAM symbols from a flat bit array."""
    bits = np.asarray(bits, dtype=np.uint8)
    k = int(np.log2(mod_order))
    if bits.ndim != 1 or bits.size % k:
        raise InvalidArgumentError(f"bit count {bits.size} is not a multiple of {k}")
    b = bits.reshape(-1, k)
    if mod_order == 4:
        return ((1.0 - 2.0 * b[:, 0]) + 1j * (1.0 - 2.0 * b[:, 1])) / np.sqrt(2.0)
    if mod_order == 16:
        return _AXIS16[2 * b[:, 0] + b[:, 1]] + 1j * _AXIS16[2 * b[:, 2] + b[:, 3]]
    raise InvalidArgumentError(f"unsupported modulation order {mod_order}")


def qam_demap(symbols: np.ndarray, mod_order: int) -> np.ndarray:
    """Hard minimum-distance decisions back to bits.

    Square-QAM decisions separate per axis, so nearest level per axis equals
    the nearest constellation point overall. A zero symbol resolves to the
    first of the tied levels, deterministically.
    """
    symbols = np.asarray(symbols)
    if mod_order == 4:
        out = np.empty((symbols.size, 2), dtype=np.uint8)
        out[:, 0] = symbols.real < 0
        out[:, 1] = symbols.imag < 0
        return out.reshape(-1)
    if mod_order == 16:
        edges = np.array([-2.0, 0.0, 2.0]) / np.sqrt(10.0)
        out = np.empty((symbols.size, 4), dtype=np.uint8)
        out[:, 0:2] = _AXIS16_BITS[np.digitize(symbols.real, edges)]
        out[:, 2:4] = _AXIS16_BITS[np.digitize(symbols.imag, edges)]
        return out.reshape(-1)
    raise InvalidArgumentError(f"unsupported modulation order {mod_order}")


def assemble_subframe(
    bits: np.ndarray, pattern: PilotPattern, config: FrameConfig, seed: int
) -> Subframe:
    """Place scaled pilots and Gray-mapped data on the frequency grid.

    Pilot values are unit-modulus QPSK points drawn from ``seed``; data cells
    are filled in symbol-major order.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    expected = subframe_bit_count(pattern, config)
    if bits.size != expected:
        raise InvalidArgumentError(f"expected {expected} data bits, got {bits.size}")

    rng = rng_stream(seed, 0)
    pilot_values = QPSK_POINTS[rng.integers(0, 4, size=pattern.count)]

    x_f = np.zeros((config.nc, config.ns), dtype=np.complex128)
    for (k, i), p in zip(pattern.positions, pilot_values):
        x_f[k, i] = config.pilot_amp * p
    rows, cols = data_positions(pattern)
    x_f[rows, cols] = config.data_amp * qam_map(bits, config.mod_order)
    return Subframe(
        x_f=x_f, data_bits=bits, pilot_values=pilot_values, pattern=pattern, config=config
    )


def tx_chain(sub: Subframe) -> np.ndarray:
    """Serialize a subframe: unitary IDFT per symbol, cyclic prefix prepended."""
    cfg = sub.config
    x_t = np.fft.ifft(sub.x_f, axis=0, norm="ortho")
    out = np.empty((cfg.ns, cfg.symbol_len), dtype=np.complex128)
    out[:, cfg.n_cp :] = x_t.T
    if cfg.n_cp:
        out[:, : cfg.n_cp] = x_t[-cfg.n_cp :, :].T
    return out.reshape(-1)


def _sliced_phases(pn: PnSequence | None, cfg: FrameConfig) -> np.ndarray:
    """Per-symbol body phases (nc x ns); zero when ``pn`` is None."""
    if pn is None:
        return np.zeros((cfg.nc, cfg.ns))
    needed = cfg.ns * cfg.symbol_len
    if len(pn) < needed:
        raise InvalidArgumentError(
            f"phase sequence of {len(pn)} samples is shorter than the subframe ({needed})"
        )
    blocks = pn.phases[:needed].reshape(cfg.ns, cfg.symbol_len)
    return blocks[:, cfg.n_cp :].T


def rx_chain(
    tx_stream: np.ndarray,
    chan: ChannelRealization,
    pn: PnSequence | None,
    noise_seed: int | None,
    config: FrameConfig,
) -> np.ndarray:
    """Received frequency grid under the circular per-symbol channel model.

    Noise is injected on post-prefix body samples (the prefix is discarded
    anyway), before the phase rotation, matching the symbol-level model
    exactly rather than up to prefix effects.
    """
    x_bodies = _tx_bodies(tx_stream, config)
    noise = _noise_grid(noise_seed, config)
    phases = _sliced_phases(pn, config)
    y_t = np.empty_like(x_bodies)
    for i in range(config.ns):
        h = tap_column_padded(chan, i, config.nc)
        y_t[:, i] = np.exp(1j * phases[:, i]) * (
            circular_convolve(h, x_bodies[:, i]) + noise[:, i]
        )
    return np.fft.fft(y_t, axis=0, norm="ortho")


def rx_chain_linear(
    tx_stream: np.ndarray,
    chan: ChannelRealization,
    pn: PnSequence | None,
    noise_seed: int | None,
    config: FrameConfig,
) -> np.ndarray:
    """Received grid via physical linear convolution over the full stream.

    The stream passes through the tapped delay line symbol block by symbol
    block (taps held per symbol), with inter-block tails carried into the
    next block's prefix region. For tap spans within the cyclic prefix this
    matches :func:`rx_chain` exactly; it exists to validate that equivalence.
    """
    sym_len = config.symbol_len
    if tx_stream.size != config.ns * sym_len:
        raise InvalidArgumentError("stream length does not match the frame dimensions")
    indices = np.asarray(chan.tap_indices, dtype=int)
    span = int(indices.max()) + 1
    if span > config.n_cp + 1:
        raise InvalidArgumentError(
            f"tap span {span} exceeds the cyclic prefix ({config.n_cp}); "
            "the circular model would not hold"
        )
    blocks = tx_stream.reshape(config.ns, sym_len)
    out = np.zeros(config.ns * sym_len + span - 1, dtype=np.complex128)
    for i in range(config.ns):
        h = np.zeros(span, dtype=np.complex128)
        h[indices] = chan.taps[:, i]
        out[i * sym_len : i * sym_len + sym_len + span - 1] += np.convolve(blocks[i], h)
    stream = out[: config.ns * sym_len]

    noise = _noise_grid(noise_seed, config)
    bodies = stream.reshape(config.ns, sym_len)[:, config.n_cp :].T + noise
    phases = _sliced_phases(pn, config)
    return np.fft.fft(np.exp(1j * phases) * bodies, axis=0, norm="ortho")


def _tx_bodies(tx_stream: np.ndarray, config: FrameConfig) -> np.ndarray:
    tx_stream = np.asarray(tx_stream)
    if tx_stream.ndim != 1 or tx_stream.size != config.ns * config.symbol_len:
        raise InvalidArgumentError("stream length does not match the frame dimensions")
    return tx_stream.reshape(config.ns, config.symbol_len)[:, config.n_cp :].T


def _noise_grid(noise_seed: int | None, config: FrameConfig) -> np.ndarray:
    if noise_seed is None:
        return np.zeros((config.nc, config.ns), dtype=np.complex128)
    rng = rng_stream(noise_seed, 0)
    return complex_normal(rng, (config.nc, config.ns), var=1.0)


def ls_pilot_estimates(y_f: np.ndarray, sub: Subframe) -> SparseGrid:
    """Least-squares channel estimates y/x at the pilot cells."""
    cfg = sub.config
    if cfg.pilot_amp == 0:
        raise InvalidArgumentError("pilot amplitude is zero")
    values = np.zeros((cfg.nc, cfg.ns), dtype=np.complex128)
    mask = sub.pattern.mask()
    for (k, i), p in zip(sub.pattern.positions, sub.pilot_values):
        values[k, i] = y_f[k, i] / (cfg.pilot_amp * p)
    return SparseGrid(values=values, mask=mask)


def equalize_and_demap(
    y_f: np.ndarray, h_hat: np.ndarray, sub: Subframe
) -> tuple[np.ndarray, int]:
    """One-tap equalization of the data cells, then hard decisions.

    Cells whose channel estimate is exactly zero demap from a zero symbol
    (the maximally uncertain input) rather than dividing by zero.

    Returns the decided bits and the bit error count against the subframe.
    """
    cfg = sub.config
    rows, cols = data_positions(sub.pattern)
    y = y_f[rows, cols]
    h = h_hat[rows, cols]
    x_hat = np.where(h != 0, y / np.where(h != 0, h, 1.0), 0.0) / cfg.data_amp
    bits_hat = qam_demap(x_hat, cfg.mod_order)
    errors = int(np.count_nonzero(bits_hat != sub.data_bits))
    return bits_hat, errors
