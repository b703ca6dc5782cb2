"""Build-once cache of the desk-scale training artifacts.

Training the estimator takes tens of minutes on one core, so the slow tests
share a dataset and checkpoint cached under tests/_cache, keyed by the
digest of the training preset. Run this file directly to warm the cache
ahead of a test session:

    python tests/deskcache.py
"""
from __future__ import annotations

import fcntl
import hashlib
import time
from pathlib import Path

from ofdmlab.estimator import load_estimator, save_estimator
from ofdmlab.harness import generate_dataset, history_table, load_config, load_dataset, run_training

TESTS_DIR = Path(__file__).resolve().parent
TRAIN_PRESET = TESTS_DIR.parent / "presets" / "desk_train.cfg"
CACHE_ROOT = TESTS_DIR / "_cache"

# Only these keys influence the dataset and the trained weights; keying the
# cache on them keeps it valid across unrelated config additions.
_TRAIN_KEYS = (
    "nc", "ns", "n_cp", "sf", "st", "bandwidth_hz", "doppler_hz", "scatterers",
    "train_count", "val_count", "test_count", "epochs", "samples_per_epoch",
    "minibatch", "base_lr", "decay_period", "sigma_train_deg",
    "train_snr_lo_db", "train_snr_hi_db", "seed",
)


def _train_digest(cfg) -> str:
    text = "\n".join(f"{key}={cfg.values[key]}" for key in _TRAIN_KEYS)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def ensure_desk(log=None):
    """Return (cfg, manifest_path, checkpoint_path), building them on first use.

    A file lock serializes concurrent builders; the checkpoint is written
    last so its presence marks a complete cache entry.
    """
    cfg = load_config(TRAIN_PRESET)
    root = CACHE_ROOT / f"desk-{_train_digest(cfg)}"
    root.mkdir(parents=True, exist_ok=True)
    manifest = root / "dataset" / "manifest.txt"
    ckpt = root / "estimator.ckpt"
    with open(root / ".lock", "w") as lockfh:
        fcntl.flock(lockfh, fcntl.LOCK_EX)
        if not manifest.exists():
            generate_dataset(cfg, root / "dataset")
        if not ckpt.exists():
            net, result = run_training(cfg, load_dataset(manifest), log=log)
            (root / "history.csv").write_text(
                history_table(result).to_csv_text(), encoding="utf-8"
            )
            save_estimator(net, str(ckpt))
    return cfg, manifest, ckpt


def load_desk_net(ckpt):
    return load_estimator(str(ckpt))


if __name__ == "__main__":
    t0 = time.time()

    def progress(epoch, train_l1, val_l1, lr):
        print(
            f"[{time.time() - t0:7.1f}s] epoch {epoch:4d}  train_l1 {train_l1:.5f}  "
            f"val_l1 {val_l1:.5f}  lr {lr:g}",
            flush=True,
        )

    cfg, manifest, ckpt = ensure_desk(log=progress)
    print(f"dataset:    {manifest}")
    print(f"checkpoint: {ckpt}")
