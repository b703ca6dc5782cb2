"""Command line front end.

Every subcommand that takes ``--config`` also accepts one flag per config
key (for example ``--trials 200``); flag values override the file. Errors
print a single machine-readable line to stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import OfdmLabError
from .harness import (
    CONFIG_KEYS,
    emit_outputs,
    generate_dataset,
    history_table,
    load_config,
    load_dataset,
    run_ber_experiment,
    run_mse_experiment,
    run_training,
)


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", required=True, help="experiment config file")
    for key in CONFIG_KEYS:
        parser.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="V")


def _config_from_args(args):
    overrides = {
        key: getattr(args, f"cfg_{key}")
        for key in CONFIG_KEYS
        if getattr(args, f"cfg_{key}", None) is not None
    }
    return load_config(args.config, overrides=overrides)


def _cmd_gen_data(args) -> int:
    cfg = _config_from_args(args)
    manifest = generate_dataset(cfg, cfg.dataset)
    print(manifest)
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from_args(args)
    from .estimator import save_estimator

    dataset = load_dataset(Path(cfg.dataset) / "manifest.txt")

    def progress(epoch, train_l1, val_l1, lr):
        print(f"epoch {epoch:4d}  train_l1 {train_l1:.5f}  val_l1 {val_l1:.5f}  lr {lr:g}", flush=True)

    net, result = run_training(cfg, dataset, log=progress)
    ckpt = Path(cfg.checkpoint)
    if ckpt.parent != Path("."):
        ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_estimator(net, ckpt)
    table = history_table(result)
    table.meta["final_val_l1"] = f"{result.val_loss[-1]:.15g}"
    for path in emit_outputs(table, cfg, f"{cfg.experiment}_train"):
        print(path)
    print(ckpt)
    return 0


def _load_net_and_data(cfg):
    from .estimator import load_estimator

    net = load_estimator(cfg.checkpoint)
    dataset = load_dataset(Path(cfg.dataset) / "manifest.txt")
    return net, dataset


def _cmd_eval_mse(args) -> int:
    cfg = _config_from_args(args)
    net, dataset = _load_net_and_data(cfg)
    table = run_mse_experiment(cfg, net, dataset)
    for path in emit_outputs(table, cfg, f"{cfg.experiment}_mse"):
        print(path)
    return 0


def _cmd_eval_ber(args) -> int:
    cfg = _config_from_args(args)
    net, dataset = _load_net_and_data(cfg)
    table = run_ber_experiment(cfg, net, dataset)
    for path in emit_outputs(table, cfg, f"{cfg.experiment}_ber"):
        print(path)
    return 0


def _cmd_plot(args) -> int:
    from .plotting import render_csv

    for path in render_csv(args.csv, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ofdmlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a channel dataset")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train the channel estimator")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval-mse", help="channel estimation MSE sweep")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_eval_mse)

    p = sub.add_parser("eval-ber", help="bit error rate sweep")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_eval_ber)

    p = sub.add_parser("plot", help="re-render figures from a results file")
    p.add_argument("csv", help="results file written by eval-mse/eval-ber")
    p.add_argument("--out", help="output directory (default: next to the file)")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OfdmLabError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(json.dumps({"error": "FileNotFoundError", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
