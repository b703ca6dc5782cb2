"""Phase-noise estimation and compensation around the channel estimator.

The receiver reconstructs a phase-noise-free time reference for each
pilot-bearing symbol from the estimated channel and a data-filled frequency
grid, reads per-sample phase rotations off the ratio received/reference at
a sparse set of time indices, interpolates a full phase grid under a
separable correlation prior, derotates the received samples, and estimates
the channel a second time from the cleaned signal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import griddata

from .errors import InvalidArgumentError, NoEstimatesError
from .estimator import EstimatorNetwork, estimate
from .numerics import SparseGrid, circular_convolve
from .ofdm import FrameConfig, Subframe, data_positions, ls_pilot_estimates, qam_demap, qam_map


@dataclass
class PnEstimates:
    """Unit-modulus phase factors observed at scattered (sample, symbol) cells."""

    samples: np.ndarray  # time-sample index within the symbol body
    symbols: np.ndarray  # OFDM symbol index
    factors: np.ndarray  # complex, unit modulus
    weights: np.ndarray  # reference power |s_j|^2
    skipped: int = 0

    def __len__(self) -> int:
        return self.factors.size


@dataclass
class PnGrid:
    """Dense phase estimate (radians), time sample x symbol."""

    phases: np.ndarray


@dataclass(frozen=True)
class InterpSettings:
    """Phase interpolation behaviour.

    ``rho_time`` and ``rho_symbol`` set the separable prior correlation per
    unit sample/symbol lag; ``prior_var`` its marginal variance (rad^2).
    Observation noise enters as ``noise_var / (2 * weight)`` per estimate,
    the small-angle phase variance of unit-variance complex noise around a
    reference of power ``weight``, plus ``obs_var_floor``.
    """

    mode: str = "mmse"
    rho_time: float = 0.999
    rho_symbol: float = 0.95
    prior_var: float = 1.0
    noise_var: float = 1.0
    obs_var_floor: float = 0.0
    ridge: float = 1e-6


def predict_time_reference(h_col: np.ndarray, x_col: np.ndarray) -> np.ndarray:
    """Expected time-domain symbol body given a channel column and its grid.

    The tap vector is recovered from the frequency response by an inverse
    FFT (exact under the convention that the response is the plain DFT of
    the padded taps), then circularly convolved with the symbol body.
    """
    h_col = np.asarray(h_col)
    x_col = np.asarray(x_col)
    if h_col.shape != x_col.shape or h_col.ndim != 1:
        raise InvalidArgumentError("channel and grid columns must be equal-length vectors")
    h_t = np.fft.ifft(h_col)
    x_t = np.fft.ifft(x_col, norm="ortho")
    return circular_convolve(h_t, x_t)


def estimate_pn_samples(
    y_t: np.ndarray,
    s_t: np.ndarray,
    indices: np.ndarray,
    symbol: int,
    threshold_rel: float = 1e-3,
) -> PnEstimates:
    """Per-sample phase factors (y/s normalized to unit modulus) at ``indices``.

    Samples whose reference magnitude falls below ``threshold_rel`` times
    the reference RMS are skipped; an empty result raises.
    """
    y_t = np.asarray(y_t)
    s_t = np.asarray(s_t)
    indices = np.asarray(indices, dtype=int)
    if indices.size and (indices.min() < 0 or indices.max() >= s_t.size):
        raise InvalidArgumentError("phase sample indices fall outside the symbol body")
    floor = threshold_rel * np.sqrt(np.mean(np.abs(s_t) ** 2))
    s = s_t[indices]
    keep = np.abs(s) > floor
    if not np.any(keep):
        raise NoEstimatesError(
            f"all {indices.size} reference samples of symbol {symbol} fell below threshold"
        )
    ratio = y_t[indices[keep]] / s[keep]
    mag = np.abs(ratio)
    # A zero received sample gives a zero ratio; map it to phase 0.
    factors = np.where(mag > 0, ratio / np.where(mag > 0, mag, 1.0), 1.0)
    return PnEstimates(
        samples=indices[keep],
        symbols=np.full(keep.sum(), symbol, dtype=int),
        factors=factors,
        weights=np.abs(s[keep]) ** 2,
        skipped=int(np.count_nonzero(~keep)),
    )


def merge_estimates(parts: list[PnEstimates]) -> PnEstimates:
    if not parts:
        raise NoEstimatesError("no phase estimates to merge")
    return PnEstimates(
        samples=np.concatenate([p.samples for p in parts]),
        symbols=np.concatenate([p.symbols for p in parts]),
        factors=np.concatenate([p.factors for p in parts]),
        weights=np.concatenate([p.weights for p in parts]),
        skipped=sum(p.skipped for p in parts),
    )


def _unwrapped_angles(est: PnEstimates) -> np.ndarray:
    """Phase angles, unwrapped along the time axis within each symbol."""
    theta = np.empty(len(est))
    for sym in np.unique(est.symbols):
        sel = np.nonzero(est.symbols == sym)[0]
        order = np.argsort(est.samples[sel])
        theta[sel[order]] = np.unwrap(np.angle(est.factors[sel[order]]))
    return theta


def interpolate_pn_grid(
    est: PnEstimates, nc: int, ns: int, settings: InterpSettings = InterpSettings()
) -> PnGrid:
    """Fill a dense phase grid from scattered estimates.

    The default is the linear minimum-variance interpolant under a
    separable exponential correlation prior with weighted observation
    noise. "bilinear" falls back to scatter-linear interpolation with
    nearest-neighbour fill outside the convex hull.
    """
    if len(est) == 0:
        raise NoEstimatesError("cannot interpolate an empty estimate set")
    theta = _unwrapped_angles(est)
    if settings.mode == "bilinear":
        pts = np.column_stack([est.samples, est.symbols]).astype(float)
        grid_pts = np.stack(
            np.meshgrid(np.arange(nc), np.arange(ns), indexing="ij"), axis=-1
        ).reshape(-1, 2)
        vals = griddata(pts, theta, grid_pts, method="linear")
        holes = np.isnan(vals)
        if np.any(holes):
            vals[holes] = griddata(pts, theta, grid_pts[holes], method="nearest")
        return PnGrid(phases=vals.reshape(nc, ns))
    if settings.mode != "mmse":
        raise InvalidArgumentError(f"unknown interpolation mode {settings.mode!r}")

    j = est.samples.astype(float)
    i = est.symbols.astype(float)
    c_obs = (
        settings.prior_var
        * settings.rho_time ** np.abs(j[:, None] - j[None, :])
        * settings.rho_symbol ** np.abs(i[:, None] - i[None, :])
    )
    r = settings.noise_var / (2.0 * est.weights) + settings.obs_var_floor
    system = c_obs + np.diag(r)
    try:
        alpha = np.linalg.solve(system, theta)
    except np.linalg.LinAlgError:
        system = system + settings.ridge * np.eye(len(est))
        alpha = np.linalg.solve(system, theta)

    a_t = settings.rho_time ** np.abs(np.arange(nc)[:, None] - j[None, :])
    a_s = settings.rho_symbol ** np.abs(np.arange(ns)[:, None] - i[None, :])
    phases = settings.prior_var * np.einsum("mk,ik,k->mi", a_t, a_s, alpha)
    return PnGrid(phases=phases)


def compensate(y_t: np.ndarray, grid: PnGrid) -> tuple[np.ndarray, np.ndarray]:
    """Derotate symbol bodies by the phase grid; returns (y_t', Y_f')."""
    y_t = np.asarray(y_t)
    if y_t.shape != grid.phases.shape:
        raise InvalidArgumentError("signal and phase grid dimensions differ")
    y_clean = y_t * np.exp(-1j * grid.phases)
    return y_clean, np.fft.fft(y_clean, axis=0, norm="ortho")


@dataclass(frozen=True)
class PipelineSettings:
    fill_mode: str = "decision"  # "decision" or "pilot"
    threshold_rel: float = 1e-3
    interp: InterpSettings = InterpSettings()


@dataclass
class PipelineResult:
    h_first: np.ndarray
    h_refined: np.ndarray
    y_f_comp: np.ndarray
    pn_grid: PnGrid
    estimates: PnEstimates


def _filled_column(
    y_col: np.ndarray, h_col: np.ndarray, symbol: int, sub: Subframe, mode: str
) -> np.ndarray:
    """Known pilots plus (optionally) re-modulated data decisions."""
    cfg = sub.config
    x = np.zeros(cfg.nc, dtype=np.complex128)
    pk = sub.pattern.subcarriers(symbol)
    # positions are symbol-major with ascending subcarriers, matching pk.
    sel = np.array([n for n, (_, i) in enumerate(sub.pattern.positions) if i == symbol])
    x[pk] = cfg.pilot_amp * sub.pilot_values[sel]
    if mode == "decision":
        data = np.setdiff1d(np.arange(cfg.nc), pk)
        h = h_col[data]
        x_eq = np.where(h != 0, y_col[data] / np.where(h != 0, h, 1.0), 0.0) / cfg.data_amp
        bits = qam_demap(x_eq, cfg.mod_order)
        x[data] = cfg.data_amp * qam_map(bits, cfg.mod_order)
    elif mode != "pilot":
        raise InvalidArgumentError(f"unknown fill mode {mode!r}")
    return x


def full_pipeline(
    y_f: np.ndarray,
    net: EstimatorNetwork,
    sub: Subframe,
    settings: PipelineSettings = PipelineSettings(),
) -> PipelineResult:
    """Two-pass estimation: channel, then phase, then channel again.

    Phase sampling reuses the pilot subcarrier indices of each pilot-bearing
    symbol as time-sample indices into that symbol's body.
    """
    cfg = sub.config
    sparse = ls_pilot_estimates(y_f, sub)
    h_first = estimate(net, sparse)

    y_t = np.fft.ifft(y_f, axis=0, norm="ortho")
    parts = []
    for sym in sub.pattern.symbols():
        x_fill = _filled_column(y_f[:, sym], h_first[:, sym], sym, sub, settings.fill_mode)
        s_t = predict_time_reference(h_first[:, sym], x_fill)
        indices = sub.pattern.subcarriers(sym)
        parts.append(
            estimate_pn_samples(
                y_t[:, sym], s_t, indices, sym, threshold_rel=settings.threshold_rel
            )
        )
    merged = merge_estimates(parts)
    grid = interpolate_pn_grid(merged, cfg.nc, cfg.ns, settings.interp)
    _, y_f_comp = compensate(y_t, grid)

    h_refined = estimate(net, ls_pilot_estimates(y_f_comp, sub))
    return PipelineResult(
        h_first=h_first,
        h_refined=h_refined,
        y_f_comp=y_f_comp,
        pn_grid=grid,
        estimates=merged,
    )
