"""Learned channel estimation: a small convolutional network that completes
the full time-frequency response from sparse pilot observations.

The network sees one real plane at a time (an Nc x Ns image holding either
the real or the imaginary part of least-squares pilot estimates, zero off
the pilot cells) and returns the completed plane. Both planes of a complex
grid go through the same weights.

Training draws fresh augmentation on every epoch: each selected channel
realization gets an independent random phase per pilot and new pilot noise
at a pilot SNR drawn uniformly from a range, so the network never sees the
same noisy input twice.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptCheckpointError, InvalidArgumentError, TrainingDivergedError
from .nn import (
    ConvLayer,
    adam_init,
    adam_step,
    checkpoint_load,
    checkpoint_save,
    conv2d_backward,
    conv2d_forward,
    flip_layout,
    l1_loss,
    lr_at_epoch,
    make_conv_layer,
    relu_backward,
)
from .numerics import SparseGrid, rng_stream

# (in_channels, out_channels, kh, kw) of the four layers. ReLU after all
# but the last. Same padding throughout, so planes keep their size.
NETWORK_LAYOUT = (
    (1, 64, 16, 4),
    (64, 32, 16, 4),
    (32, 21, 17, 5),
    (21, 1, 20, 8),
)


@dataclass
class EstimatorNetwork:
    layers: list[ConvLayer]
    trained: bool = False
    meta: dict = field(default_factory=dict)


def build_network(seed: int, dtype=np.float32) -> EstimatorNetwork:
    """Freshly initialized network with the standard four-layer layout."""
    rng = rng_stream(seed, 0)
    layers = [make_conv_layer(ci, co, kh, kw, rng, dtype=dtype) for ci, co, kh, kw in NETWORK_LAYOUT]
    return EstimatorNetwork(layers=layers, meta={"init_seed": int(seed)})


def network_forward(
    net: EstimatorNetwork, x: np.ndarray, method: str = "fft", keep: bool = False
):
    """Run the stack on (batch, 1, nc, ns) planes.

    Activations travel in the engine-internal (H, W, batch, channel) layout
    between layers, converted once at entry and exit. Returns (output,
    trace); the trace holds per-layer inputs, pre-activations and FFT
    contexts for :func:`network_backward` when ``keep`` is set.
    """
    trace = [] if keep else None
    cur = flip_layout(x)
    last = len(net.layers) - 1
    for idx, layer in enumerate(net.layers):
        pre, ctx = conv2d_forward(cur, layer, method=method, keep_ctx=keep, layout="hwbc")
        if idx != last:
            # pre is freshly allocated, so clip in place; the stored array
            # yields the same mask as the pre-activation would.
            np.maximum(pre, 0.0, out=pre)
        if keep:
            trace.append((cur, pre, ctx))
        cur = pre
    return flip_layout(cur), trace


def network_backward(net: EstimatorNetwork, trace, grad_out: np.ndarray, method: str = "fft"):
    """Gradients for every layer from a (batch, 1, nc, ns) output gradient.

    Returns a flat list [w0, b0, w1, b1, ...] matching parameter order.
    """
    grads: list = [None] * (2 * len(net.layers))
    g = flip_layout(grad_out)
    last = len(net.layers) - 1
    for idx in range(last, -1, -1):
        x_in, post, ctx = trace[idx]
        if idx != last:
            g = relu_backward(post, g)
        g, gw, gb = conv2d_backward(
            x_in, net.layers[idx], g, method=method, ctx=ctx, layout="hwbc"
        )
        grads[2 * idx] = gw
        grads[2 * idx + 1] = gb
    return grads


def network_params(net: EstimatorNetwork) -> list[np.ndarray]:
    out = []
    for layer in net.layers:
        out.append(layer.weights)
        out.append(layer.bias)
    return out


@dataclass
class TrainingSample:
    """One augmented plane pair: network input and its regression target."""

    input_plane: np.ndarray
    target_plane: np.ndarray
    plane: str
    pilot_snr_db: float


def make_training_sample(
    h_act: np.ndarray,
    pattern,
    sigma_deg: float,
    pilot_snr_db: float,
    rng: np.random.Generator,
) -> tuple[TrainingSample, TrainingSample]:
    """Augment one channel realization into its (real, imag) plane samples.

    Pilot cells get the true response rotated by an independent Gaussian
    phase per pilot plus complex noise scaled to the pilot SNR; targets are
    the clean planes. Returns the real-part and imaginary-part samples.
    """
    h_act = np.asarray(h_act)
    mask = pattern.mask()
    if h_act.shape != mask.shape:
        raise InvalidArgumentError("channel grid and pilot pattern dimensions differ")
    rows, cols = np.nonzero(mask)
    amp = np.sqrt(10.0 ** (pilot_snr_db / 10.0))
    phi = np.radians(sigma_deg) * rng.standard_normal(rows.size)
    noise = (rng.standard_normal(rows.size) + 1j * rng.standard_normal(rows.size)) / np.sqrt(2.0)
    observed = h_act[rows, cols] * np.exp(1j * phi) + noise / amp

    planes = []
    for name, view in (("real", observed.real), ("imag", observed.imag)):
        inp = np.zeros(mask.shape, dtype=np.float32)
        inp[rows, cols] = view
        tgt = (h_act.real if name == "real" else h_act.imag).astype(np.float32)
        planes.append(
            TrainingSample(
                input_plane=inp, target_plane=tgt, plane=name, pilot_snr_db=float(pilot_snr_db)
            )
        )
    return planes[0], planes[1]


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 300
    samples_per_epoch: int = 1000
    minibatch: int = 64
    base_lr: float = 1e-3
    decay_period: int = 60
    sigma_deg: float = 1.58
    pilot_snr_lo_db: float = 0.0
    pilot_snr_hi_db: float = 30.0
    seed: int = 0


@dataclass
class TrainResult:
    train_loss: np.ndarray
    val_loss: np.ndarray


def _augment_batch(grids: np.ndarray, idx: np.ndarray, pattern, settings, rng):
    """Vectorized augmentation of ``idx`` realizations into (2n, 1, nc, ns) planes."""
    rows, cols = np.nonzero(pattern.mask())
    n = idx.size
    snr = rng.uniform(settings.pilot_snr_lo_db, settings.pilot_snr_hi_db, size=n)
    amp = np.sqrt(10.0 ** (snr / 10.0))
    phi = np.radians(settings.sigma_deg) * rng.standard_normal((n, rows.size))
    noise = (
        rng.standard_normal((n, rows.size)) + 1j * rng.standard_normal((n, rows.size))
    ) / np.sqrt(2.0)
    pil = grids[idx][:, rows, cols] * np.exp(1j * phi) + noise / amp[:, None]

    nc, ns = pattern.mask().shape
    inputs = np.zeros((2 * n, 1, nc, ns), dtype=np.float32)
    targets = np.empty((2 * n, 1, nc, ns), dtype=np.float32)
    inputs[0::2, 0, rows, cols] = pil.real
    inputs[1::2, 0, rows, cols] = pil.imag
    targets[0::2, 0] = grids[idx].real
    targets[1::2, 0] = grids[idx].imag
    return inputs, targets


def _epoch_loss(net, inputs, targets, minibatch):
    """Mean L1 over a fixed set, forward only."""
    total = 0.0
    for lo in range(0, inputs.shape[0], minibatch):
        sl = slice(lo, lo + minibatch)
        out, _ = network_forward(net, inputs[sl], keep=False)
        loss, _ = l1_loss(out, targets[sl])
        total += loss * (out.shape[0] / inputs.shape[0])
    return total


def train(
    net: EstimatorNetwork,
    train_grids: np.ndarray,
    val_grids: np.ndarray,
    pattern,
    settings: TrainSettings,
    log=None,
) -> TrainResult:
    """Adam training with per-epoch resampling and step learning-rate decay.

    ``train_grids`` and ``val_grids`` are stacks of clean channel responses
    (realizations, nc, ns). Every epoch samples realizations without
    replacement, augments them freshly, and walks minibatches in order (a
    trailing partial minibatch is kept). Validation uses one fixed augmented
    set built up front. Raises on non-finite loss. ``log``, when given, is
    called after every epoch with (epoch, train_loss, val_loss, lr).
    """
    train_grids = np.asarray(train_grids)
    val_grids = np.asarray(val_grids)
    if settings.samples_per_epoch % 2 or settings.samples_per_epoch <= 0:
        raise InvalidArgumentError("samples_per_epoch must be a positive even number")
    picks = settings.samples_per_epoch // 2
    if train_grids.shape[0] < picks:
        raise InvalidArgumentError(
            f"need at least {picks} training realizations, got {train_grids.shape[0]}"
        )

    params = network_params(net)
    state = adam_init(params)
    val_rng = rng_stream(settings.seed, (1, 0))
    val_in, val_tgt = _augment_batch(
        val_grids, np.arange(val_grids.shape[0]), pattern, settings, val_rng
    )

    train_hist = np.empty(settings.epochs)
    val_hist = np.empty(settings.epochs)
    for epoch in range(settings.epochs):
        rng = rng_stream(settings.seed, (0, epoch))
        idx = rng.choice(train_grids.shape[0], size=picks, replace=False)
        inputs, targets = _augment_batch(train_grids, idx, pattern, settings, rng)
        order = rng.permutation(inputs.shape[0])
        inputs, targets = inputs[order], targets[order]

        lr = lr_at_epoch(epoch, settings.base_lr, settings.decay_period)
        running = 0.0
        for lo in range(0, inputs.shape[0], settings.minibatch):
            sl = slice(lo, lo + settings.minibatch)
            out, trace = network_forward(net, inputs[sl], keep=True)
            loss, grad = l1_loss(out, targets[sl])
            if not np.isfinite(loss):
                raise TrainingDivergedError("non-finite training loss", epoch=epoch, lr=lr)
            running += loss * (out.shape[0] / inputs.shape[0])
            grads = network_backward(net, trace, grad)
            adam_step(params, grads, state, lr)
        train_hist[epoch] = running
        val_hist[epoch] = _epoch_loss(net, val_in, val_tgt, settings.minibatch)
        if not np.isfinite(val_hist[epoch]):
            raise TrainingDivergedError("non-finite validation loss", epoch=epoch, lr=lr)
        if log is not None:
            log(epoch, train_hist[epoch], val_hist[epoch], lr)

    net.trained = True
    net.meta.update(
        {
            "epochs": settings.epochs,
            "sigma_deg": settings.sigma_deg,
            "train_seed": settings.seed,
            "final_val_loss": float(val_hist[-1]) if settings.epochs else None,
        }
    )
    return TrainResult(train_loss=train_hist, val_loss=val_hist)


def estimate(net: EstimatorNetwork, sparse: SparseGrid) -> np.ndarray:
    """Complete a sparse complex grid; both parts share the network weights."""
    planes = np.stack(
        [sparse.values.real, sparse.values.imag]
    ).astype(np.float32)[:, None, :, :]
    out, _ = network_forward(net, planes, keep=False)
    return (out[0, 0].astype(np.float64) + 1j * out[1, 0].astype(np.float64))


def save_estimator(net: EstimatorNetwork, path: str):
    with open(path, "wb") as fh:
        fh.write(checkpoint_save(net.layers))


def load_estimator(path: str) -> EstimatorNetwork:
    """Load a checkpoint and verify it matches the standard layout."""
    with open(path, "rb") as fh:
        layers = checkpoint_load(fh.read())
    layout = tuple((l.in_channels, l.out_channels, *l.kernel) for l in layers)
    if layout != NETWORK_LAYOUT:
        raise CorruptCheckpointError(f"checkpoint layout {layout} is not the expected network")
    return EstimatorNetwork(layers=layers, trained=True, meta={"path": str(path)})
