"""Experiment harness: flat config files, dataset generation, Monte Carlo
MSE/BER runs and delimited output with sidecar metadata.

Config files are ``key=value`` lines ('#' starts a comment). Unknown and
duplicate keys are rejected with their line number. Every run echoes its
full effective configuration into a ``.meta`` sidecar so results can be
reproduced from the artifacts alone.
"""
from __future__ import annotations

import hashlib
import struct
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .channel import ChannelRealization, frequency_response, generate_channel, quantize_pdp, vehicular_a
from .errors import ConfigError, InvalidArgumentError
from .estimator import (
    EstimatorNetwork,
    TrainResult,
    TrainSettings,
    build_network,
    estimate,
    train,
)
from .numerics import rng_stream, spline_interpolate_2d
from .ofdm import (
    FrameConfig,
    build_pilot_pattern,
    assemble_subframe,
    data_snr_from_ebn0,
    equalize_and_demap,
    ls_pilot_estimates,
    rx_chain,
    subframe_bit_count,
    tx_chain,
)
from .phase_noise import (
    PSD_PRESETS,
    gen_gaussian_pn,
    gen_psd_pn,
    gen_wiener_pn,
)
from .pncomp import InterpSettings, PipelineSettings, full_pipeline

def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple:
    return tuple(float(part) for part in text.split(",") if part.strip() != "")


# key -> (parser, default); None default means the key is optional and unset.
CONFIG_KEYS: dict = {
    "experiment": (str, None),
    "nc": (int, 72),
    "ns": (int, 14),
    "n_cp": (int, 16),
    "mod_order": (int, 4),
    "sf": (int, 6),
    "st": (int, 7),
    "bandwidth_hz": (float, 1.6e6),
    "doppler_hz": (float, 97.0),
    "scatterers": (int, 64),
    "pn_model": (str, "none"),
    "pn_preset": (int, 3),
    "pn_sigma_deg": (float, None),
    "pn_rescale": (_parse_bool, True),
    "pn_beta_hz": (float, 1e3),
    "pilot_snrs": (_parse_floats, (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)),
    "eb_n0s": (_parse_floats, (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)),
    "pilot_snr_db": (float, 30.0),
    "eb_n0_db": (float, 25.0),
    "trials": (int, 500),
    "min_errors": (int, 100),
    "max_trials": (int, 20000),
    "train_count": (int, 4000),
    "val_count": (int, 500),
    "test_count": (int, 1000),
    "epochs": (int, 300),
    "samples_per_epoch": (int, 1000),
    "minibatch": (int, 64),
    "base_lr": (float, 1e-3),
    "decay_period": (int, 60),
    "sigma_train_deg": (float, 1.58),
    "train_snr_lo_db": (float, 0.0),
    "train_snr_hi_db": (float, 30.0),
    "seed": (int, 1234),
    "fill_mode": (str, "decision"),
    "pn_interp": (str, "mmse"),
    "rho_time": (float, None),
    "rho_symbol": (float, None),
    "prior_var": (float, None),
    "noise_var": (float, 1.0),
    "obs_var_floor": (float, 0.01),
    "ber_sweep": (str, "ebn0"),
    "dataset": (str, "dataset"),
    "checkpoint": (str, "estimator.ckpt"),
    "output": (str, "runs"),
    "plot": (_parse_bool, True),
}

_CHOICE_KEYS = {
    "pn_model": ("none", "gaussian", "psd", "wiener"),
    "fill_mode": ("decision", "pilot"),
    "pn_interp": ("mmse", "bilinear"),
    "ber_sweep": ("ebn0", "pilot"),
    "mod_order": (4, 16),
    "pn_preset": tuple(PSD_PRESETS),
}

_POSITIVE_KEYS = (
    "nc", "ns", "sf", "st", "bandwidth_hz", "scatterers", "trials", "min_errors",
    "max_trials", "train_count", "val_count", "test_count", "epochs",
    "samples_per_epoch", "minibatch", "base_lr", "decay_period",
)


@dataclass
class ExperimentConfig:
    values: dict
    source: str = "<defaults>"

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def canonical_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            val = self.values[key]
            if isinstance(val, tuple):
                val = ",".join(f"{v:g}" for v in val)
            lines.append(f"{key}={val}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()[:16]

    def frame(self, pilot_snr_db: float | None = None, eb_n0_db: float | None = None) -> FrameConfig:
        return FrameConfig(
            nc=self.nc,
            ns=self.ns,
            n_cp=self.n_cp,
            mod_order=self.mod_order,
            pilot_snr_db=self.pilot_snr_db if pilot_snr_db is None else pilot_snr_db,
            data_snr_db=data_snr_from_ebn0(
                self.eb_n0_db if eb_n0_db is None else eb_n0_db, self.mod_order
            ),
        )

    def pattern(self):
        return build_pilot_pattern(self.nc, self.ns, self.sf, self.st)

    def _derived_interp(self) -> tuple[float, float, float]:
        """(rho_time, rho_symbol, prior_var) matched to the configured PN model.

        The sampled phase process of the Gaussian model and of the shaped-PSD
        presets is white to within a fraction of a percent at the configured
        bandwidth, so the matched prior is a spike with the model's own
        variance. The random-walk model drifts slowly and keeps a smooth
        prior instead. Without phase noise the prior variance is zero and the
        compensation pass becomes a no-op.
        """
        if self.pn_model == "none":
            return 0.0, 0.0, 0.0
        if self.pn_model == "gaussian":
            return 0.0, 0.0, float(np.radians(self.pn_sigma_deg)) ** 2
        if self.pn_model == "psd":
            params, label = PSD_PRESETS[self.pn_preset]
            if self.pn_rescale:
                sigma = self.pn_sigma_deg if self.pn_sigma_deg is not None else label
                return 0.0, 0.0, float(np.radians(sigma)) ** 2
            # un-rescaled sequences carry only the in-band part of the PSD
            n = self.ns * (self.nc + self.n_cp)
            freqs = np.arange(1, n // 2 + 1) * self.bandwidth_hz / n
            var = float(np.sum(params.level(freqs)) * self.bandwidth_hz / n)
            return 0.0, 0.0, var
        # wiener: variance grows linearly along the subframe; use its average
        n = self.ns * (self.nc + self.n_cp)
        step_var = 2.0 * np.pi * self.pn_beta_hz / self.bandwidth_hz
        return 0.999, 0.95, float(step_var * n / 2.0)

    def pipeline_settings(self) -> PipelineSettings:
        rho_t, rho_s, prior = self._derived_interp()
        return PipelineSettings(
            fill_mode=self.fill_mode,
            interp=InterpSettings(
                mode=self.pn_interp,
                rho_time=rho_t if self.rho_time is None else self.rho_time,
                rho_symbol=rho_s if self.rho_symbol is None else self.rho_symbol,
                prior_var=prior if self.prior_var is None else self.prior_var,
                noise_var=self.noise_var,
                obs_var_floor=self.obs_var_floor,
            ),
        )

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            epochs=self.epochs,
            samples_per_epoch=self.samples_per_epoch,
            minibatch=self.minibatch,
            base_lr=self.base_lr,
            decay_period=self.decay_period,
            sigma_deg=self.sigma_train_deg,
            pilot_snr_lo_db=self.train_snr_lo_db,
            pilot_snr_hi_db=self.train_snr_hi_db,
            seed=self.seed,
        )

    def symbol_duration(self) -> float:
        return (self.nc + self.n_cp) / self.bandwidth_hz


def _validate_config(values: dict):
    if not values.get("experiment"):
        raise ConfigError("missing required key 'experiment'")
    for key in _POSITIVE_KEYS:
        if values[key] <= 0:
            raise ConfigError(f"key '{key}' must be positive, got {values[key]}")
    for key, allowed in _CHOICE_KEYS.items():
        if values[key] not in allowed:
            raise ConfigError(f"key '{key}' must be one of {allowed}, got {values[key]!r}")
    if values["n_cp"] < 0 or values["n_cp"] > values["nc"]:
        raise ConfigError("n_cp must lie in [0, nc]")
    if values["pn_model"] == "gaussian" and values["pn_sigma_deg"] is None:
        raise ConfigError("pn_model=gaussian needs pn_sigma_deg")
    if values["sigma_train_deg"] < 0:
        raise ConfigError("sigma_train_deg must be non-negative")
    for key in ("rho_time", "rho_symbol"):
        if values[key] is not None and not 0.0 <= values[key] <= 1.0:
            raise ConfigError(f"key '{key}' must lie in [0, 1], got {values[key]}")
    if values["prior_var"] is not None and values["prior_var"] < 0:
        raise ConfigError("prior_var must be non-negative")
    if values["noise_var"] <= 0:
        raise ConfigError("noise_var must be positive")
    if values["obs_var_floor"] < 0:
        raise ConfigError("obs_var_floor must be non-negative")


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a flat config file, with optional overrides."""
    values = {key: default for key, (_, default) in CONFIG_KEYS.items()}
    seen: dict[str, int] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {raw!r}", line=lineno)
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key '{key}'", line=lineno)
        if key in seen:
            raise ConfigError(f"duplicate key '{key}' (first on line {seen[key]})", line=lineno)
        seen[key] = lineno
        parser = CONFIG_KEYS[key][0]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for '{key}': {exc}", line=lineno) from None
    if overrides:
        for key, val in overrides.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown override key '{key}'")
            parser = CONFIG_KEYS[key][0]
            values[key] = parser(val) if isinstance(val, str) else val
    _validate_config(values)
    return ExperimentConfig(values=values, source=str(path))


def child_seed(seed: int, *ids: int) -> int:
    """A derived 63-bit seed, stable across runs."""
    return int(rng_stream(seed, ids).integers(0, 2**63))


# ---------------------------------------------------------------------------
# dataset files

_RECORD_HEAD = struct.Struct("<IIII d d d")  # index, n_taps, nc, ns, doppler, fs, t_sym


@dataclass
class ChannelDataset:
    records: list
    splits: dict
    meta: dict

    def split(self, name: str) -> list:
        lo, hi = self.splits[name]
        return self.records[lo:hi]

    def freq_grids(self, name: str, dtype=np.complex64) -> np.ndarray:
        part = self.split(name)
        return np.stack([rec.freq_response for rec in part]).astype(dtype)


def generate_dataset(cfg: ExperimentConfig, out_dir) -> Path:
    """Draw train/val/test channel realizations and write them to disk.

    Returns the manifest path. Records are streamed to a single binary file;
    the manifest holds dimensions, split boundaries and per-record offsets.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    profile = quantize_pdp(vehicular_a(), cfg.bandwidth_hz)
    count = cfg.train_count + cfg.val_count + cfg.test_count
    t_sym = cfg.symbol_duration()

    bin_path = out / "channels.bin"
    offsets = []
    with open(bin_path, "wb") as fh:
        for r in range(count):
            chan = generate_channel(
                profile,
                cfg.doppler_hz,
                cfg.ns,
                cfg.nc,
                t_sym,
                rng_stream(cfg.seed, (2, r)),
                scatterers=cfg.scatterers,
            )
            offsets.append(fh.tell())
            fh.write(_RECORD_HEAD.pack(r, len(chan.tap_indices), cfg.nc, cfg.ns,
                                       cfg.doppler_hz, cfg.bandwidth_hz, t_sym))
            fh.write(np.asarray(chan.tap_indices, dtype="<u4").tobytes())
            inter = np.empty((len(chan.tap_indices), cfg.ns, 2), dtype="<f4")
            inter[..., 0] = chan.taps.real
            inter[..., 1] = chan.taps.imag
            fh.write(inter.tobytes())
        total = fh.tell()

    manifest = out / "manifest.txt"
    head = [
        "records=channels.bin",
        f"count={count}",
        f"train={cfg.train_count}",
        f"val={cfg.val_count}",
        f"test={cfg.test_count}",
        f"seed={cfg.seed}",
        f"nc={cfg.nc}",
        f"ns={cfg.ns}",
        f"bandwidth_hz={cfg.bandwidth_hz:.15g}",
        f"doppler_hz={cfg.doppler_hz:.15g}",
        f"total_bytes={total}",
    ]
    body = [f"{r} {off}" for r, off in enumerate(offsets)]
    manifest.write_text("\n".join(head + body) + "\n", encoding="utf-8")
    return manifest


def load_dataset(manifest_path) -> ChannelDataset:
    manifest_path = Path(manifest_path)
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    meta: dict = {}
    offsets = []
    for line in lines:
        if "=" in line:
            key, _, val = line.partition("=")
            meta[key] = val
        elif line.strip():
            _, off = line.split()
            offsets.append(int(off))
    count = int(meta["count"])
    if len(offsets) != count:
        raise InvalidArgumentError(
            f"manifest lists {len(offsets)} records but declares count={count}"
        )
    splits = {
        "train": (0, int(meta["train"])),
        "val": (int(meta["train"]), int(meta["train"]) + int(meta["val"])),
        "test": (int(meta["train"]) + int(meta["val"]), count),
    }

    records = []
    data = (manifest_path.parent / meta["records"]).read_bytes()
    for off in offsets:
        idx, n_taps, nc, ns, doppler, fs, t_sym = _RECORD_HEAD.unpack_from(data, off)
        pos = off + _RECORD_HEAD.size
        indices = np.frombuffer(data, dtype="<u4", count=n_taps, offset=pos)
        pos += 4 * n_taps
        inter = np.frombuffer(data, dtype="<f4", count=n_taps * ns * 2, offset=pos)
        taps = inter.reshape(n_taps, ns, 2).astype(np.float64)
        taps = taps[..., 0] + 1j * taps[..., 1]
        records.append(
            ChannelRealization(
                taps=taps,
                tap_indices=tuple(int(i) for i in indices),
                freq_response=frequency_response(taps, indices, nc),
                doppler_hz=doppler,
                symbol_duration=t_sym,
                sample_rate=fs,
            )
        )
    return ChannelDataset(records=records, splits=splits, meta=meta)


# ---------------------------------------------------------------------------
# result tables

@dataclass
class ResultTable:
    columns: list
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add_row(self, *values):
        if len(values) != len(self.columns):
            raise InvalidArgumentError(
                f"row has {len(values)} cells, table has {len(self.columns)} columns"
            )
        self.rows.append([float(v) for v in values])

    def column(self, name: str) -> np.ndarray:
        return np.array([row[self.columns.index(name)] for row in self.rows])

    def to_csv_text(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(f"{v:.15g}" for v in row))
        return "\n".join(lines) + "\n"


def build_id() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if desc.returncode == 0 and desc.stdout.strip():
            return f"ofdmlab-{__version__}+{desc.stdout.strip()}"
    except OSError:
        pass
    return f"ofdmlab-{__version__}"


def emit_outputs(table: ResultTable, cfg: ExperimentConfig, stem: str, plot: bool | None = None):
    """Write ``<output>/<stem>.csv`` plus a .meta sidecar and optional plots.

    Returns the list of written paths.
    """
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    csv_path.write_text(table.to_csv_text(), encoding="utf-8")

    meta_lines = [f"build={build_id()}", f"config_sha256={cfg.digest()}"]
    meta_lines += [f"config.{line}" for line in cfg.canonical_text().strip().splitlines()]
    for key in sorted(table.meta):
        meta_lines.append(f"{key}={table.meta[key]}")
    meta_path = out / f"{stem}.meta"
    meta_path.write_text("\n".join(meta_lines) + "\n", encoding="utf-8")

    paths = [csv_path, meta_path]
    if plot if plot is not None else cfg.plot:
        from .plotting import render_table

        paths += render_table(table, out, stem)
    return paths


# ---------------------------------------------------------------------------
# experiments

def _make_pn(cfg: ExperimentConfig, n: int, rng):
    if cfg.pn_model == "none":
        return None
    if cfg.pn_model == "gaussian":
        return gen_gaussian_pn(cfg.pn_sigma_deg, n, rng)
    if cfg.pn_model == "wiener":
        return gen_wiener_pn(cfg.pn_beta_hz, n, cfg.bandwidth_hz, rng)
    params, label = PSD_PRESETS[cfg.pn_preset]
    target = None
    if cfg.pn_rescale:
        target = cfg.pn_sigma_deg if cfg.pn_sigma_deg is not None else label
    return gen_psd_pn(params, n, cfg.bandwidth_hz, rng, target_sigma_deg=target)


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(a - b) ** 2))


def run_mse_experiment(cfg: ExperimentConfig, net: EstimatorNetwork, dataset: ChannelDataset) -> ResultTable:
    """Channel-estimation MSE versus pilot SNR.

    Per trial: one held-out channel, fresh data/pilots/noise/phase noise.
    Columns compare the first-pass estimate, the refined estimate after
    phase compensation, the spline baseline on the same received grid, and
    the first-pass estimate of a phase-noise-free rerun with identical
    channel and noise. MSE is a plain squared-error mean; the channel
    ensemble is unit power, so no renormalization is applied.
    """
    pattern = cfg.pattern()
    pipeline_settings = cfg.pipeline_settings()
    test = dataset.split("test")
    n_pn = cfg.ns * (cfg.nc + cfg.n_cp)
    table = ResultTable(
        columns=["pilot_snr_db", "mse_first", "mse_refined", "mse_spline", "mse_no_pn"],
        meta={"trials": cfg.trials, "normalization": "plain mean squared error, unit-power channel"},
    )
    for p_idx, pilot_snr in enumerate(cfg.pilot_snrs):
        frame = cfg.frame(pilot_snr_db=pilot_snr)
        n_bits = subframe_bit_count(pattern, frame)
        acc = np.zeros(4)
        for t in range(cfg.trials):
            chan = test[t % len(test)]
            bits = rng_stream(cfg.seed, (3, p_idx, t, 0)).integers(0, 2, size=n_bits)
            sub = assemble_subframe(bits, pattern, frame, child_seed(cfg.seed, 3, p_idx, t, 1))
            pn = _make_pn(cfg, n_pn, rng_stream(cfg.seed, (3, p_idx, t, 2)))
            noise_seed = child_seed(cfg.seed, 3, p_idx, t, 3)
            tx = tx_chain(sub)
            y_f = rx_chain(tx, chan, pn, noise_seed, frame)

            res = full_pipeline(y_f, net, sub, pipeline_settings)
            h_true = chan.freq_response
            spline = spline_interpolate_2d(ls_pilot_estimates(y_f, sub)).grid
            y_ref = y_f if pn is None else rx_chain(tx, chan, None, noise_seed, frame)
            h_ref = (
                res.h_first if pn is None else estimate(net, ls_pilot_estimates(y_ref, sub))
            )
            acc += (
                _mse(res.h_first, h_true),
                _mse(res.h_refined, h_true),
                _mse(spline, h_true),
                _mse(h_ref, h_true),
            )
        table.add_row(pilot_snr, *(acc / cfg.trials))
    return table


def run_ber_experiment(cfg: ExperimentConfig, net: EstimatorNetwork, dataset: ChannelDataset) -> ResultTable:
    """Uncoded bit error rate of hard decisions, three receivers.

    ``ber_first`` decodes the received grid with the first-pass channel
    estimate, ``ber_refined`` decodes the phase-compensated grid with the
    refined estimate, ``ber_perfect_csi`` decodes a phase-noise-free rerun
    (same channel and noise) with the true channel. Each sweep point keeps
    adding blocks of ``trials`` subframes until every receiver has at least
    ``min_errors`` errors or ``max_trials`` subframes were spent.
    """
    pattern = cfg.pattern()
    pipeline_settings = cfg.pipeline_settings()
    test = dataset.split("test")
    n_pn = cfg.ns * (cfg.nc + cfg.n_cp)
    sweep_pilot = cfg.ber_sweep == "pilot"
    points = cfg.pilot_snrs if sweep_pilot else cfg.eb_n0s
    table = ResultTable(
        columns=[
            "pilot_snr_db" if sweep_pilot else "eb_n0_db",
            "ber_first",
            "ber_refined",
            "ber_perfect_csi",
            "subframes",
            "bits",
            "errors_first",
            "errors_refined",
            "errors_perfect",
        ],
        meta={"min_errors": cfg.min_errors, "max_trials": cfg.max_trials},
    )
    for p_idx, point in enumerate(points):
        frame = (
            cfg.frame(pilot_snr_db=point) if sweep_pilot else cfg.frame(eb_n0_db=point)
        )
        n_bits = subframe_bit_count(pattern, frame)
        errs = np.zeros(3, dtype=np.int64)
        done = 0
        while True:
            block = min(cfg.trials, cfg.max_trials - done)
            if block <= 0:
                break
            for t in range(done, done + block):
                chan = test[t % len(test)]
                bits = rng_stream(cfg.seed, (4, p_idx, t, 0)).integers(0, 2, size=n_bits)
                sub = assemble_subframe(bits, pattern, frame, child_seed(cfg.seed, 4, p_idx, t, 1))
                pn = _make_pn(cfg, n_pn, rng_stream(cfg.seed, (4, p_idx, t, 2)))
                noise_seed = child_seed(cfg.seed, 4, p_idx, t, 3)
                tx = tx_chain(sub)
                y_f = rx_chain(tx, chan, pn, noise_seed, frame)

                res = full_pipeline(y_f, net, sub, pipeline_settings)
                _, e_first = equalize_and_demap(y_f, res.h_first, sub)
                _, e_refined = equalize_and_demap(res.y_f_comp, res.h_refined, sub)
                y_clean = y_f if pn is None else rx_chain(tx, chan, None, noise_seed, frame)
                _, e_perfect = equalize_and_demap(y_clean, chan.freq_response, sub)
                errs += (e_first, e_refined, e_perfect)
            done += block
            if errs.min() >= cfg.min_errors or done >= cfg.max_trials:
                break
        total_bits = done * n_bits
        table.add_row(
            point,
            errs[0] / total_bits,
            errs[1] / total_bits,
            errs[2] / total_bits,
            done,
            total_bits,
            *errs,
        )
    return table


def run_training(cfg: ExperimentConfig, dataset: ChannelDataset, log=None):
    """Train a fresh network per the config; returns (network, history)."""
    net = build_network(cfg.seed)
    result = train(
        net,
        dataset.freq_grids("train"),
        dataset.freq_grids("val"),
        cfg.pattern(),
        cfg.train_settings(),
        log=log,
    )
    return net, result


def history_table(result: TrainResult) -> ResultTable:
    table = ResultTable(columns=["epoch", "train_l1", "val_l1"])
    for e, (tr, va) in enumerate(zip(result.train_loss, result.val_loss)):
        table.add_row(e, tr, va)
    return table
