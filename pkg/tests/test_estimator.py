"""Tests for the learned channel estimator.

Small hand-built networks keep the gradient checks fast; the desk-marked
test at the end compares the trained network against the spline baseline on
the cached validation set.
"""

import numpy as np
import pytest

from ofdmlab.errors import CorruptCheckpointError, InvalidArgumentError, TrainingDivergedError
from ofdmlab.estimator import (
    NETWORK_LAYOUT,
    EstimatorNetwork,
    TrainSettings,
    _augment_batch,
    build_network,
    estimate,
    load_estimator,
    make_training_sample,
    network_backward,
    network_forward,
    network_params,
    save_estimator,
    train,
)
from ofdmlab.nn import checkpoint_save, make_conv_layer, parameter_count
from ofdmlab.numerics import SparseGrid, rng_stream, spline_interpolate_2d
from ofdmlab.ofdm import build_pilot_pattern


def tiny_network(seed: int, dtype=np.float64) -> EstimatorNetwork:
    """A 1 -> 3 -> 1 stack small enough for finite differences."""
    rng = rng_stream(seed, (99,))
    layers = [
        make_conv_layer(1, 3, 3, 3, rng, dtype=dtype),
        make_conv_layer(3, 1, 2, 2, rng, dtype=dtype),
    ]
    return EstimatorNetwork(layers=layers)


class TestBuildNetwork:
    def test_layout_and_size(self):
        net = build_network(0)
        layout = tuple((l.in_channels, l.out_channels, *l.kernel) for l in net.layers)
        assert layout == NETWORK_LAYOUT
        assert parameter_count(net.layers) == 195766
        assert not net.trained
        assert net.meta["init_seed"] == 0

    def test_seed_determinism(self):
        a, b = build_network(7), build_network(7)
        c = build_network(8)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.weights, lb.weights)
        assert not np.array_equal(a.layers[0].weights, c.layers[0].weights)

    def test_param_list_aliases_layers(self):
        net = build_network(1)
        params = network_params(net)
        assert len(params) == 8
        assert params[0] is net.layers[0].weights
        assert params[7] is net.layers[3].bias


class TestForward:
    def test_shape_and_dtype(self):
        net = build_network(3)
        x = rng_stream(3, (1,)).normal(size=(2, 1, 72, 14)).astype(np.float32)
        y, trace = network_forward(net, x)
        assert y.shape == (2, 1, 72, 14)
        assert y.dtype == np.float32
        assert trace is None

    def test_fft_and_direct_agree(self):
        net = tiny_network(5)
        x = rng_stream(5, (1,)).normal(size=(2, 1, 9, 7))
        y_fft, _ = network_forward(net, x, method="fft")
        y_dir, _ = network_forward(net, x, method="direct")
        np.testing.assert_allclose(y_fft, y_dir, atol=1e-10)

    def test_backward_matches_finite_differences(self):
        net = tiny_network(6)
        rng = rng_stream(6, (1,))
        x = rng.normal(size=(2, 1, 5, 4))
        g = rng.normal(size=(2, 1, 5, 4))

        def loss():
            y, _ = network_forward(net, x, method="direct")
            return float(np.sum(y * g))

        _, trace = network_forward(net, x, method="direct", keep=True)
        grads = network_backward(net, trace, g, method="direct")
        params = network_params(net)
        assert len(grads) == len(params)
        eps = 1e-6
        for p, analytic in zip(params, grads):
            flat, gflat = p.reshape(-1), analytic.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + eps
                hi = loss()
                flat[i] = keep - eps
                lo = loss()
                flat[i] = keep
                assert gflat[i] == pytest.approx((hi - lo) / (2 * eps), rel=1e-4, abs=1e-7)


class TestTrainingSample:
    def setup_method(self):
        self.pattern = build_pilot_pattern(12, 4, 6, 2)
        self.rng = rng_stream(9, (0,))
        self.h = (
            self.rng.normal(size=(12, 4)) + 1j * self.rng.normal(size=(12, 4))
        ) / np.sqrt(2)

    def test_planes_and_masking(self):
        re, im = make_training_sample(self.h, self.pattern, 1.58, 20.0, self.rng)
        mask = self.pattern.mask()
        assert re.plane == "real" and im.plane == "imag"
        assert re.pilot_snr_db == 20.0
        assert re.input_plane.dtype == np.float32
        assert np.all(re.input_plane[~mask] == 0)
        assert np.all(im.input_plane[~mask] == 0)
        np.testing.assert_allclose(re.target_plane, self.h.real.astype(np.float32))
        np.testing.assert_allclose(im.target_plane, self.h.imag.astype(np.float32))

    def test_clean_limit_reproduces_the_channel(self):
        # No phase augmentation and a huge pilot SNR leave the pilots intact.
        re, im = make_training_sample(self.h, self.pattern, 0.0, 200.0, self.rng)
        mask = self.pattern.mask()
        np.testing.assert_allclose(re.input_plane[mask], self.h.real[mask], atol=1e-5)
        np.testing.assert_allclose(im.input_plane[mask], self.h.imag[mask], atol=1e-5)

    def test_shape_mismatch_is_rejected(self):
        with pytest.raises(InvalidArgumentError):
            make_training_sample(np.zeros((6, 4)), self.pattern, 1.0, 10.0, self.rng)

    def test_augment_batch_interleaves_planes(self):
        grids = np.stack([self.h, 2.0 * self.h]).astype(np.complex64)
        settings = TrainSettings(sigma_deg=0.0, pilot_snr_lo_db=200.0, pilot_snr_hi_db=200.0)
        inputs, targets = _augment_batch(
            grids, np.arange(2), self.pattern, settings, rng_stream(9, (1,))
        )
        assert inputs.shape == (4, 1, 12, 4)
        mask = self.pattern.mask()
        np.testing.assert_allclose(inputs[0, 0][mask], self.h.real[mask], atol=1e-5)
        np.testing.assert_allclose(inputs[1, 0][mask], self.h.imag[mask], atol=1e-5)
        np.testing.assert_allclose(inputs[2, 0][mask], 2 * self.h.real[mask], atol=1e-5)
        np.testing.assert_allclose(targets[3, 0], 2 * self.h.imag, atol=1e-6)


class TestTrain:
    def setup_method(self):
        self.pattern = build_pilot_pattern(12, 4, 6, 2)
        rng = rng_stream(10, (0,))
        self.grids = (
            rng.normal(size=(16, 12, 4)) + 1j * rng.normal(size=(16, 12, 4))
        ).astype(np.complex64) / np.sqrt(2)
        self.settings = TrainSettings(
            epochs=3,
            samples_per_epoch=8,
            minibatch=4,
            base_lr=1e-3,
            decay_period=2,
            sigma_deg=1.58,
            pilot_snr_lo_db=10.0,
            pilot_snr_hi_db=20.0,
            seed=4,
        )

    def test_short_run_learns_and_logs(self):
        net = tiny_network(11, dtype=np.float32)
        calls = []
        result = train(
            net,
            self.grids[:12],
            self.grids[12:],
            self.pattern,
            self.settings,
            log=lambda *args: calls.append(args),
        )
        assert result.train_loss.shape == (3,)
        assert result.val_loss.shape == (3,)
        assert np.all(np.isfinite(result.train_loss))
        assert len(calls) == 3
        assert calls[0][0] == 0 and calls[0][3] == 1e-3
        assert calls[2][3] == 5e-4
        assert net.trained
        assert net.meta["final_val_loss"] == pytest.approx(result.val_loss[-1])

    def test_same_seed_same_history(self):
        r1 = train(tiny_network(12, np.float32), self.grids[:12], self.grids[12:], self.pattern, self.settings)
        r2 = train(tiny_network(12, np.float32), self.grids[:12], self.grids[12:], self.pattern, self.settings)
        np.testing.assert_array_equal(r1.train_loss, r2.train_loss)
        np.testing.assert_array_equal(r1.val_loss, r2.val_loss)

    def test_odd_samples_per_epoch_rejected(self):
        bad = TrainSettings(epochs=1, samples_per_epoch=7)
        with pytest.raises(InvalidArgumentError):
            train(tiny_network(13), self.grids[:12], self.grids[12:], self.pattern, bad)

    def test_too_few_realizations_rejected(self):
        bad = TrainSettings(epochs=1, samples_per_epoch=1000)
        with pytest.raises(InvalidArgumentError, match="realizations"):
            train(tiny_network(13), self.grids[:12], self.grids[12:], self.pattern, bad)

    def test_divergence_raises(self):
        wild = TrainSettings(
            epochs=50, samples_per_epoch=8, minibatch=4, base_lr=1e18, decay_period=1000, seed=4
        )
        with pytest.raises(TrainingDivergedError):
            train(tiny_network(14, np.float32), self.grids[:12], self.grids[12:], self.pattern, wild)


class TestEstimate:
    def test_matches_plane_forward(self):
        net = tiny_network(15, np.float32)
        rng = rng_stream(15, (1,))
        mask = np.zeros((8, 6), dtype=bool)
        mask[::2, ::3] = True
        values = np.where(mask, rng.normal(size=(8, 6)) + 1j * rng.normal(size=(8, 6)), 0)
        out = estimate(net, SparseGrid(values=values, mask=mask))
        assert out.shape == (8, 6)
        assert out.dtype == np.complex128
        planes = np.stack([values.real, values.imag]).astype(np.float32)[:, None]
        ref, _ = network_forward(net, planes)
        np.testing.assert_allclose(out.real, ref[0, 0], atol=1e-7)
        np.testing.assert_allclose(out.imag, ref[1, 0], atol=1e-7)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        net = build_network(21)
        path = tmp_path / "net.ckpt"
        save_estimator(net, str(path))
        loaded = load_estimator(str(path))
        assert loaded.trained
        for a, b in zip(net.layers, loaded.layers):
            np.testing.assert_array_equal(a.weights, b.weights)
            np.testing.assert_array_equal(a.bias, b.bias)

    def test_wrong_layout_is_rejected(self, tmp_path):
        path = tmp_path / "other.ckpt"
        path.write_bytes(checkpoint_save(tiny_network(22).layers))
        with pytest.raises(CorruptCheckpointError, match="layout"):
            load_estimator(str(path))


@pytest.mark.desk
class TestTrainedQuality:
    def test_beats_spline_on_the_validation_set(self, desk):
        """The trained network's L1 on the fixed validation set must beat a
        separable spline run on the same sparse inputs."""
        cfg, dataset, net = desk
        pattern = cfg.pattern()
        settings = cfg.train_settings()
        val = dataset.freq_grids("val")
        val_in, val_tgt = _augment_batch(
            val, np.arange(val.shape[0]), pattern, settings, rng_stream(settings.seed, (1, 0))
        )

        total = 0.0
        for lo in range(0, val_in.shape[0], 64):
            out, _ = network_forward(net, val_in[lo : lo + 64])
            total += float(np.sum(np.abs(out - val_tgt[lo : lo + 64])))
        net_l1 = total / val_tgt.size

        mask = pattern.mask()
        spline_sum = 0.0
        for k in range(val.shape[0]):
            values = np.zeros(mask.shape, dtype=np.complex128)
            values[mask] = val_in[2 * k, 0][mask] + 1j * val_in[2 * k + 1, 0][mask]
            grid = spline_interpolate_2d(SparseGrid(values=values, mask=mask)).grid
            tgt = val_tgt[2 * k, 0] + 1j * val_tgt[2 * k + 1, 0]
            spline_sum += float(np.sum(np.abs(grid.real - tgt.real)))
            spline_sum += float(np.sum(np.abs(grid.imag - tgt.imag)))
        spline_l1 = spline_sum / val_tgt.size

        print(f"\nvalidation L1: network {net_l1:.5f}  spline {spline_l1:.5f}")
        assert net_l1 < spline_l1
