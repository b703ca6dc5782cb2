"""End-to-end command line tests at toy sizes, driven through main()."""

import json

import pytest

from ofdmlab.cli import build_parser, main

TINY = """\
experiment = tiny
nc = 16
ns = 4
n_cp = 8
sf = 4
st = 2
scatterers = 8
train_count = 4
val_count = 2
test_count = 3
epochs = 2
samples_per_epoch = 4
minibatch = 2
trials = 2
pilot_snrs = 10,20
eb_n0s = 10
min_errors = 1
max_trials = 2
seed = 77
"""


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "tiny.cfg").write_text(TINY, encoding="utf-8")
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestPipeline:
    def test_full_walkthrough(self, workdir, capsys):
        code, out, _ = run(capsys, "gen-data", "--config", "tiny.cfg")
        assert code == 0
        assert (workdir / "dataset" / "manifest.txt").exists()
        assert "manifest.txt" in out

        code, out, _ = run(capsys, "train", "--config", "tiny.cfg")
        assert code == 0
        assert (workdir / "estimator.ckpt").exists()
        assert "epoch    0" in out and "epoch    1" in out
        assert (workdir / "runs" / "tiny_train.csv").exists()
        meta = (workdir / "runs" / "tiny_train.meta").read_text()
        assert "final_val_l1=" in meta

        code, out, _ = run(capsys, "eval-mse", "--config", "tiny.cfg", "--plot", "false")
        assert code == 0
        csv_text = (workdir / "runs" / "tiny_mse.csv").read_text()
        assert csv_text.startswith("pilot_snr_db,mse_first,")
        assert len(csv_text.splitlines()) == 3
        assert not (workdir / "runs" / "tiny_mse_mse.svg").exists()

        code, out, _ = run(capsys, "eval-ber", "--config", "tiny.cfg")
        assert code == 0
        assert (workdir / "runs" / "tiny_ber.csv").exists()
        assert (workdir / "runs" / "tiny_ber_ber.svg").exists()

        code, out, _ = run(capsys, "plot", str(workdir / "runs" / "tiny_mse.csv"))
        assert code == 0
        assert (workdir / "runs" / "tiny_mse_mse.svg").exists()

    def test_override_flags_reach_the_run(self, workdir, capsys):
        run(capsys, "gen-data", "--config", "tiny.cfg")
        run(capsys, "train", "--config", "tiny.cfg")
        code, _, _ = run(
            capsys,
            "eval-mse",
            "--config", "tiny.cfg",
            "--pilot-snrs", "15",
            "--pn-model", "gaussian",
            "--pn-sigma-deg", "12",
            "--plot", "false",
        )
        assert code == 0
        meta = (workdir / "runs" / "tiny_mse.meta").read_text()
        assert "config.pilot_snrs=15" in meta
        assert "config.pn_model=gaussian" in meta
        assert "config.pn_sigma_deg=12.0" in meta
        csv_text = (workdir / "runs" / "tiny_mse.csv").read_text()
        assert len(csv_text.splitlines()) == 2


class TestErrors:
    def test_config_error_is_json_on_stderr(self, workdir, capsys):
        (workdir / "bad.cfg").write_text("experiment = x\nnc = many\n", encoding="utf-8")
        code, out, err = run(capsys, "gen-data", "--config", "bad.cfg")
        assert code == 2
        assert out == ""
        payload = json.loads(err.strip())
        assert payload["error"] == "ConfigError"
        assert "line 2" in payload["message"]

    def test_missing_checkpoint(self, workdir, capsys):
        run(capsys, "gen-data", "--config", "tiny.cfg")
        code, _, err = run(capsys, "eval-mse", "--config", "tiny.cfg")
        assert code == 2
        payload = json.loads(err.strip())
        assert payload["error"] == "FileNotFoundError"
        assert "estimator.ckpt" in payload["message"]

    def test_missing_dataset(self, workdir, capsys):
        code, _, err = run(capsys, "train", "--config", "tiny.cfg")
        assert code == 2
        assert json.loads(err.strip())["error"] == "FileNotFoundError"

    def test_bad_usage_exits_via_argparse(self, workdir, capsys):
        with pytest.raises(SystemExit) as info:
            main(["eval-mse"])  # --config is required
        assert info.value.code == 2
        with pytest.raises(SystemExit):
            main(["no-such-command"])

    def test_unknown_flag_is_rejected(self, workdir, capsys):
        with pytest.raises(SystemExit):
            main(["eval-mse", "--config", "tiny.cfg", "--nonsense", "1"])


class TestParser:
    def test_every_config_key_has_a_flag(self):
        parser = build_parser()
        text = parser.format_help()
        assert "gen-data" in text and "eval-ber" in text
        sub = [a for a in parser._actions if hasattr(a, "choices") and a.choices][0]
        mse_help = sub.choices["eval-mse"].format_help()
        assert "--pilot-snrs" in mse_help
        assert "--obs-var-floor" in mse_help
