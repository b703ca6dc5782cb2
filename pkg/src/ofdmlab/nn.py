"""Minimal convolutional network primitives on NumPy.

Two interchangeable convolution engines are provided: a direct im2col
reference and an FFT path (circular correlation on padded fast sizes with
the result window cropped out). The FFT path is what makes training
practical on a single core; the direct path exists so the two can check
each other and so gradients can be verified in float64.

Layers use cross-correlation (no kernel flip) with "same" zero padding:
for kernel extent k, padding is floor((k-1)/2) before and ceil((k-1)/2)
after, so even kernels pad one more at the bottom/right.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CorruptCheckpointError, InvalidArgumentError

CHECKPOINT_MAGIC = b"CECN"
CHECKPOINT_VERSION = 1


def same_padding(kh: int, kw: int) -> tuple[int, int, int, int]:
    """(top, bottom, left, right) zero padding preserving the plane size."""
    pt = (kh - 1) // 2
    pl = (kw - 1) // 2
    return pt, kh - 1 - pt, pl, kw - 1 - pl


@dataclass
class ConvLayer:
    """One 2-D convolution layer's parameters and padding."""

    weights: np.ndarray  # (out, in, kh, kw)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise InvalidArgumentError("weights must be 4-D (out, in, kh, kw)")
        if self.bias.shape != (self.weights.shape[0],):
            raise InvalidArgumentError("bias length must match the output channel count")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]

    @property
    def padding(self) -> tuple[int, int, int, int]:
        return same_padding(*self.kernel)


def make_conv_layer(
    in_channels: int,
    out_channels: int,
    kh: int,
    kw: int,
    rng: np.random.Generator,
    dtype=np.float32,
) -> ConvLayer:
    """Layer with uniform fan-in initialization, bias zero."""
    if min(in_channels, out_channels, kh, kw) <= 0:
        raise InvalidArgumentError("layer dimensions must be positive")
    limit = 1.0 / np.sqrt(in_channels * kh * kw)
    w = rng.uniform(-limit, limit, size=(out_channels, in_channels, kh, kw))
    return ConvLayer(weights=w.astype(dtype), bias=np.zeros(out_channels, dtype=dtype))


# ---------------------------------------------------------------------------
# direct engine

def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B, H', W', C*kh*kw) patches of an already padded input."""
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # (B, C, H', W', kh, kw)
    win = win.transpose(0, 2, 3, 1, 4, 5)
    return win.reshape(win.shape[0], win.shape[1], win.shape[2], -1)


def _forward_direct(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    kh, kw = layer.kernel
    pt, pb, pl, pr = layer.padding
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _im2col(xp, kh, kw)
    wmat = layer.weights.reshape(layer.out_channels, -1).T
    y = cols @ wmat + layer.bias
    return y.transpose(0, 3, 1, 2)


def _backward_direct(x: np.ndarray, layer: ConvLayer, grad_out: np.ndarray):
    b, _, h, w = x.shape
    kh, kw = layer.kernel
    pt, pb, pl, pr = layer.padding

    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _im2col(xp, kh, kw).reshape(b * h * w, -1)
    gmat = grad_out.transpose(0, 2, 3, 1).reshape(b * h * w, layer.out_channels)
    grad_w = (gmat.T @ cols).reshape(layer.weights.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3))

    # Gradient w.r.t. the padded input is a full correlation of the upstream
    # gradient with the flipped kernel, channels transposed.
    gp = np.pad(grad_out, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    wflip = layer.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    gcols = _im2col(gp, kh, kw)
    gxp = (gcols @ wflip.reshape(layer.in_channels, -1).T).transpose(0, 3, 1, 2)
    grad_x = gxp[:, :, pt : pt + h, pl : pl + w]
    return np.ascontiguousarray(grad_x), grad_w, grad_b


# ---------------------------------------------------------------------------
# FFT engine
#
# All spatial planes are zero-extended to fast sizes (Hp, Wp); convolution
# with "same" cropping becomes a circular correlation followed by a shifted
# window. Planes travel in (H, W, batch, channel) order so the transforms
# run over the leading axes and the spectra land frequency-major, (F, rows,
# cols), ready for one batched matmul per frequency bin without transposes.

@dataclass
class _FftCtx:
    """Forward-pass spectra cached for the backward pass."""

    xf: np.ndarray  # (F, B, Cin)
    wf: np.ndarray  # (F, Cout, Cin)
    hp: int
    wp: int


def _fft_sizes(h: int, w: int, kh: int, kw: int) -> tuple[int, int]:
    return sfft.next_fast_len(h + kh - 1, real=True), sfft.next_fast_len(w + kw - 1, real=True)


def _plane_spec(x: np.ndarray, hp: int, wp: int) -> np.ndarray:
    """rfft2 over the leading axes of (h, w, A, B), flattened to (F, A, B)."""
    spec = sfft.rfft2(x, s=(hp, wp), axes=(0, 1))
    return spec.reshape(-1, x.shape[2], x.shape[3])


def _spec_planes(spec: np.ndarray, hp: int, wp: int) -> np.ndarray:
    """Inverse of :func:`_plane_spec`; returns (hp, wp, A, B) real planes."""
    folded = spec.reshape(hp, wp // 2 + 1, spec.shape[1], spec.shape[2])
    return sfft.irfft2(folded, s=(hp, wp), axes=(0, 1))


def _weight_spec(weights: np.ndarray, hp: int, wp: int) -> np.ndarray:
    """Kernel spectra as (F, Cout, Cin)."""
    co, ci = weights.shape[0], weights.shape[1]
    spec = sfft.rfft2(weights, s=(hp, wp), axes=(2, 3)).reshape(co * ci, -1)
    return np.ascontiguousarray(spec.T).reshape(-1, co, ci)


def _window(planes: np.ndarray, r0: int, c0: int, h: int, w: int) -> np.ndarray:
    """An h x w window into the leading axes, starting at (r0, c0), wrapping."""
    hp, wp = planes.shape[0], planes.shape[1]
    r0 %= hp
    c0 %= wp
    out = np.empty((h, w) + planes.shape[2:], dtype=planes.dtype)
    rs = min(hp - r0, h)
    cs = min(wp - c0, w)
    out[:rs, :cs] = planes[r0 : r0 + rs, c0 : c0 + cs]
    if rs < h:
        out[rs:, :cs] = planes[: h - rs, c0 : c0 + cs]
    if cs < w:
        out[:rs, cs:] = planes[r0 : r0 + rs, : w - cs]
        if rs < h:
            out[rs:, cs:] = planes[: h - rs, : w - cs]
    return out


def flip_layout(x: np.ndarray) -> np.ndarray:
    """Swap (B, C, H, W) <-> (H, W, B, C); the permutation is an involution."""
    return np.ascontiguousarray(x.transpose(2, 3, 0, 1))


def _forward_fft(x: np.ndarray, layer: ConvLayer, keep_ctx: bool, layout: str):
    if layout == "bchw":
        x = flip_layout(x)
    h, w = x.shape[0], x.shape[1]
    kh, kw = layer.kernel
    pt, _, pl, _ = layer.padding
    hp, wp = _fft_sizes(h, w, kh, kw)

    xf = _plane_spec(x, hp, wp)
    wf = _weight_spec(layer.weights, hp, wp)
    yf = xf @ np.ascontiguousarray(np.conj(wf.transpose(0, 2, 1)))
    planes = _spec_planes(yf, hp, wp)  # (hp, wp, B, Cout)

    # Output row r of the "same" correlation sits at circular index r - pt.
    y = _window(planes, -pt, -pl, h, w)
    y += layer.bias
    ctx = _FftCtx(xf=xf, wf=wf, hp=hp, wp=wp) if keep_ctx else None
    if layout == "bchw":
        y = flip_layout(y)
    return y, ctx


def _backward_fft(
    x: np.ndarray, layer: ConvLayer, grad_out: np.ndarray, ctx: _FftCtx | None, layout: str
):
    if layout == "bchw":
        grad_out = flip_layout(grad_out)
    kh, kw = layer.kernel
    pt, _, pl, _ = layer.padding
    if ctx is None:
        if layout == "bchw":
            x = flip_layout(x)
        h, w = x.shape[0], x.shape[1]
        hp, wp = _fft_sizes(h, w, kh, kw)
        xf = _plane_spec(x, hp, wp)
        wf = _weight_spec(layer.weights, hp, wp)
    else:
        h, w = grad_out.shape[0], grad_out.shape[1]
        hp, wp, xf, wf = ctx.hp, ctx.wp, ctx.xf, ctx.wf

    gf = _plane_spec(grad_out, hp, wp)  # (F, B, Cout)

    # d/dx: correlate the upstream gradient with the kernel (no flip needed
    # on the circular grid; the crop shifts the other way).
    planes = _spec_planes(gf @ wf, hp, wp)
    grad_x = _window(planes, pt, pl, h, w)

    # d/dw: correlate input with upstream gradient, batch-summed.
    ef = np.ascontiguousarray(np.conj(gf.transpose(0, 2, 1))) @ xf  # (F, Cout, Cin)
    planes = _spec_planes(ef, hp, wp)
    grad_w = np.ascontiguousarray(_window(planes, -pt, -pl, kh, kw).transpose(2, 3, 0, 1))

    grad_b = grad_out.sum(axis=(0, 1, 2))
    if layout == "bchw":
        grad_x = flip_layout(grad_x)
    return grad_x, grad_w, grad_b


def _pick_method(method: str, layer: ConvLayer) -> str:
    if method == "auto":
        kh, kw = layer.kernel
        return "fft" if kh * kw >= 16 else "direct"
    if method not in ("direct", "fft"):
        raise InvalidArgumentError(f"unknown conv method {method!r}")
    return method


def _check_conv_args(x: np.ndarray, layer: ConvLayer, layout: str):
    if layout not in ("bchw", "hwbc"):
        raise InvalidArgumentError(f"unknown layout {layout!r}")
    if x.ndim != 4:
        raise InvalidArgumentError("input must be 4-D")
    channels = x.shape[1] if layout == "bchw" else x.shape[3]
    if channels != layer.in_channels:
        raise InvalidArgumentError(
            f"input has {channels} channels, layer expects {layer.in_channels}"
        )


def conv2d_forward(
    x: np.ndarray,
    layer: ConvLayer,
    method: str = "auto",
    keep_ctx: bool = False,
    layout: str = "bchw",
):
    """Same-padded 2-D cross-correlation.

    ``layout`` selects the axis order: the public default (batch, channels,
    H, W) or the engine-internal (H, W, batch, channels), which spares the
    hot training loop two transposes per layer.

    Returns (output, ctx); ``ctx`` caches forward spectra for
    :func:`conv2d_backward` when ``keep_ctx`` is set on the FFT path, and
    is None otherwise.
    """
    _check_conv_args(x, layer, layout)
    picked = _pick_method(method, layer)
    if picked == "fft":
        return _forward_fft(x, layer, keep_ctx, layout)
    if layout == "hwbc":
        return flip_layout(_forward_direct(flip_layout(x), layer)), None
    return _forward_direct(x, layer), None


def conv2d_backward(
    x: np.ndarray,
    layer: ConvLayer,
    grad_out: np.ndarray,
    method: str = "auto",
    ctx: _FftCtx | None = None,
    layout: str = "bchw",
):
    """Gradients (d_input, d_weights, d_bias) of a same-padded correlation."""
    _check_conv_args(x, layer, layout)
    g_channels = grad_out.shape[1] if layout == "bchw" else grad_out.shape[3]
    if grad_out.ndim != 4 or g_channels != layer.out_channels:
        raise InvalidArgumentError("upstream gradient shape does not match the layer output")
    picked = _pick_method(method, layer)
    if picked == "fft":
        return _backward_fft(x, layer, grad_out, ctx, layout)
    if layout == "hwbc":
        gx, gw, gb = _backward_direct(flip_layout(x), layer, flip_layout(grad_out))
        return flip_layout(gx), gw, gb
    return _backward_direct(x, layer, grad_out)


# ---------------------------------------------------------------------------
# activations, loss, optimizer

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(preact: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(preact > 0, grad_out, 0)


def l1_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error over every element, and its gradient w.r.t. pred."""
    if pred.shape != target.shape:
        raise InvalidArgumentError("prediction and target shapes differ")
    diff = pred - target
    loss = float(np.mean(np.abs(diff), dtype=np.float64))
    grad = np.sign(diff) / diff.size
    return loss, grad.astype(pred.dtype, copy=False)


def lr_at_epoch(epoch: int, base_lr: float = 1e-3, decay_period: int = 2000) -> float:
    """Step decay: the rate halves every ``decay_period`` epochs."""
    if epoch < 0:
        raise InvalidArgumentError("epoch must be non-negative")
    if decay_period <= 0:
        raise InvalidArgumentError("decay_period must be positive")
    return base_lr * 2.0 ** (-(epoch // decay_period))


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: list[np.ndarray]) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float):
    """One Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidArgumentError("params, grads and state must have matching lengths")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# checkpoint serialization
#
# Layout (little-endian): magic "CECN", version u16, layer count u16, then
# per layer in/out channels and kernel extents as u32 followed by raw f32
# weights (out, in, kh, kw order) and biases, closed by a CRC32 of all
# preceding bytes. Padding is not stored; it is implied by the kernel.

def checkpoint_save(layers: list[ConvLayer]) -> bytes:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<HH", CHECKPOINT_VERSION, len(layers))]
    for layer in layers:
        kh, kw = layer.kernel
        chunks.append(struct.pack("<IIII", layer.in_channels, layer.out_channels, kh, kw))
        chunks.append(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


def checkpoint_load(data: bytes) -> list[ConvLayer]:
    if len(data) < 12:
        raise CorruptCheckpointError("checkpoint shorter than its fixed header")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptCheckpointError("checkpoint CRC mismatch")
    if body[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError("bad checkpoint magic")
    version, count = struct.unpack_from("<HH", body, 4)
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpointError(f"unsupported checkpoint version {version}")
    offset = 8
    layers = []
    for _ in range(count):
        if offset + 16 > len(body):
            raise CorruptCheckpointError("checkpoint truncated in a layer header")
        ci, co, kh, kw = struct.unpack_from("<IIII", body, offset)
        offset += 16
        n_w, n_b = co * ci * kh * kw, co
        end = offset + 4 * (n_w + n_b)
        if end > len(body):
            raise CorruptCheckpointError("checkpoint truncated in layer data")
        w = np.frombuffer(body, dtype="<f4", count=n_w, offset=offset).reshape(co, ci, kh, kw)
        b = np.frombuffer(body, dtype="<f4", count=n_b, offset=offset + 4 * n_w)
        layers.append(ConvLayer(weights=w.copy(), bias=b.copy()))
        offset = end
    if offset != len(body):
        raise CorruptCheckpointError(f"{len(body) - offset} trailing bytes after the last layer")
    return layers


def parameter_count(layers: list[ConvLayer]) -> int:
    return sum(l.weights.size + l.bias.size for l in layers)
