import json

import numpy as np
import pytest

from sib import cli
from sib import experiments as ex

FAST = ["--epochs", "1,1,1", "--train-limit", "200", "--test-limit", "100", "--disc-hidden", "8,8",
        "--hidden-width", "16"]


def test_config_file_parsing(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# desk run\nbeta = 0.5\nhidden-width=32  # inline comment\n\nepochs = 2,1,1\n")
    assert cli.read_config_file(p) == {"beta": "0.5", "hidden_width": "32", "epochs": "2,1,1"}
    p.write_text("beta 0.5\n")
    with pytest.raises(cli.ConfigError):
        cli.read_config_file(p)


def test_flags_override_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("beta = 0.5\nlr = 0.01\n")
    args = cli.build_parser().parse_args(["train", "--config", str(p), "--beta", "0.25"])
    cfg = cli.train_config(cli.merged(args))
    assert (cfg.beta, cfg.lr) == (0.25, 0.01)


@pytest.mark.parametrize("variant,beta,base", [("svib", 1.0, "vib"), ("sqsvib", 1.0, "sqvib"),
                                               ("snib", 0.01, "nib"), ("vib", 1.0, "vib")])
def test_variant_defaults(variant, beta, base):
    cfg = cli.train_config({"variant": variant})
    assert (cfg.beta, cfg.variant) == (beta, base)


def test_subset_preset_is_default():
    cfg = cli.train_config({})
    assert (cfg.hidden_width, cfg.lr, cfg.epochs) == (256, 1e-3, (30, 10, 10))
    ref = cli.train_config({"preset": "reference"})
    assert (ref.lr, ref.epochs) == (1e-4, (10, 5, 5))


def test_train_writes_one_row_per_k_and_reruns_identically(tmp_path, capsys):
    out = tmp_path / "a"
    rc = cli.main(["train", "--variant", "svib", "--beta", "1", "--k", "0,1,2", "--seed", "7",
                   "--out", str(out), *FAST])
    assert rc == 0
    rows = ex.read_csv(out / "metrics.csv", "metrics")
    assert [(r["k"], r["total_encoders"], r["seed"]) for r in rows] == [("0", "1", "7"), ("1", "2", "7"),
                                                                      ("2", "3", "7")]
    assert "total encoders 3" in capsys.readouterr().out
    weights = json.loads((out / "weights.json").read_text())
    assert [len(w["weights"]) for w in weights] == [1, 2, 3]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["git"] and manifest["wall_seconds"] > 0
    assert cli.main(["rerun", str(out / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    assert (out / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_config_errors_exit_2(tmp_path, capsys):
    assert cli.main(["train", "--beta", "abc", "--out", str(tmp_path)]) == 2
    assert cli.main(["train", "--variant", "xib", "--out", str(tmp_path)]) == 2
    assert cli.main(["train", "--data-root", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2
    assert cli.main(["train", "--epochs", "1,1", "--out", str(tmp_path)]) == 2
    assert cli.main(["rerun", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2


def test_numerical_abort_exits_3_and_keeps_partial_rows(tmp_path, monkeypatch):
    from sib.training import NumericalAbort

    real = ex._run_one

    def flaky(cfg):
        if cfg.k == 1:
            raise NumericalAbort("stage2", 0, 3, "non-finite loss")
        return real(cfg)

    monkeypatch.setattr(ex, "_run_one", flaky)
    rc = cli.main(["train", "--k", "0,1", "--out", str(tmp_path), *FAST])
    assert rc == 3
    assert [r["k"] for r in ex.read_csv(tmp_path / "metrics.csv", "metrics")] == ["0"]


def test_ibplane_outputs(tmp_path):
    rc = cli.main(["ibplane", "--betas", "0.001,0.1", "--k", "1", "--out", str(tmp_path), *FAST])
    assert rc == 0
    rows = ex.read_csv(tmp_path / "ibplane.csv", "ibplane")
    assert sorted((r["method"], r["beta"]) for r in rows) == [
        ("plain", "0.001"), ("plain", "0.1"), ("structured", "0.001"), ("structured", "0.1")]
    assert all(float(r["i_xz_gap_nats"]) == 0.0 for r in rows if r["method"] == "plain")
    for name in ("izy_vs_ixz.svg", "ixz_vs_beta.svg", "izy_vs_beta.svg"):
        assert (tmp_path / name).read_text().startswith("<svg")
    assert set(json.loads((tmp_path / "dominance.json").read_text())) == {"pairs", "wins", "fraction"}


def test_dropout_rows_and_checkpoint_mode(tmp_path):
    rc = cli.main(["dropout", "--k", "3", "--seed", "0", "--out", str(tmp_path / "d"), *FAST])
    assert rc == 0
    rows = ex.read_csv(tmp_path / "d" / "dropout.csv", "dropout")
    assert [int(r["n_dropped"]) for r in rows] == [0, 1, 2, 3]
    assert [int(r["remaining_aux"]) for r in rows] == [3, 2, 1, 0]

    from sib.datasets import find_mnist
    from sib.training import TrainConfig, run_full
    train, test = find_mnist()
    cfg = TrainConfig(k=2, epochs=(1, 1, 1), hidden_width=16, disc_hidden=(8, 8))
    run_full(cfg, train.subset(np.arange(200)), test.subset(np.arange(100)), checkpoint_dir=tmp_path / "ck")
    rc = cli.main(["dropout", "--checkpoint", str(tmp_path / "ck" / "stage3.npz"), "--test-limit", "100",
                   "--out", str(tmp_path / "e")])
    assert rc == 0
    assert len(ex.read_csv(tmp_path / "e" / "dropout.csv", "dropout")) == 3


def test_verify_theorem_exit_code_and_d_max(tmp_path):
    rc = cli.main(["verify-theorem", "--n-identity", "30", "--n-mc", "3", "--mc-samples", "20000",
                   "--d-max", "3", "--out", str(tmp_path)])
    assert rc == 0
    rep = json.loads((tmp_path / "theorem.json").read_text())
    assert len(rep["identity"]) == 30 and len(rep["mc"]) == 3
    assert max(r["dim"] for r in rep["identity"]) <= 3
    assert rep["ok"] is True


def test_verify_theorem_fails_when_mc_rate_low(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "run_suite", lambda **kw: {"identity_all_pass": True, "identity_max_rel_err": 0.0,
                                                         "mc_pass_rate": 0.9, "ok": False,
                                                         "identity": [], "mc": []})
    assert cli.main(["verify-theorem", "--out", str(tmp_path)]) == 1


def test_estimate_mi_calibration_and_checkpoint(tmp_path):
    assert cli.main(["estimate-mi", "--out", str(tmp_path / "c")]) == 0
    rows = ex.read_csv(tmp_path / "c" / "calibration.csv", "calibration")
    assert [r["channel"] for r in rows][-1] == "saturation"

    from sib.datasets import find_mnist
    from sib.training import TrainConfig, run_full
    train, test = find_mnist()
    cfg = TrainConfig(epochs=(1, 1, 1), hidden_width=16)
    run_full(cfg, train.subset(np.arange(200)), test.subset(np.arange(100)), checkpoint_dir=tmp_path / "ck")
    assert cli.main(["estimate-mi", "--checkpoint", str(tmp_path / "ck" / "stage3.npz"),
                     "--test-limit", "100", "--out", str(tmp_path / "e")]) == 0
    assert {"i_xz", "i_zy", "accuracy"} <= set(json.loads((tmp_path / "e" / "report.json").read_text()))
