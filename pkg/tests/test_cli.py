import json

import numpy as np
import pytest

from softcut import cli

FAST = ["--pretrain-epochs", "40", "--train-epochs", "5"]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert cli.main(["simulate", "--cells", "60", "--genes", "40", "--clusters", "3", "--seed", "1",
                     "--out", str(out)]) == 0
    return out


def test_simulate_outputs(sim_dir, capsys):
    assert (sim_dir / "counts.csv").read_text().count("\n") == 61
    assert len((sim_dir / "labels.csv").read_text().split()) == 60
    assert (sim_dir / "config.ini").exists()


def test_simulate_deterministic_and_sparsity(tmp_path, capsys):
    def run(out, dropout):
        cli.main(["simulate", "--cells", "50", "--genes", "30", "--clusters", "2", "--seed", "3",
                  "--dropout", str(dropout), "--out", str(out)])
        return float(capsys.readouterr().out.strip().split("=")[1])

    lo = run(tmp_path / "a", 0.05)
    hi = run(tmp_path / "b", 0.25)
    run(tmp_path / "c", 0.05)
    assert hi > lo
    assert (tmp_path / "a" / "counts.csv").read_bytes() == (tmp_path / "c" / "counts.csv").read_bytes()


def _cluster(sim_dir, out, *extra):
    return cli.main(["cluster", "--input", str(sim_dir / "counts.csv"), "--labels", str(sim_dir / "labels.csv"),
                     "--clusters", "3", "--out", str(out), "--seed", "0", "--deterministic", *FAST, *extra])


def test_cluster_outputs(sim_dir, tmp_path):
    out = tmp_path / "run"
    assert _cluster(sim_dir, out) == 0
    labels = (out / "labels.csv").read_text().split()
    assert len(labels) == 60 and set(labels) <= {"0", "1", "2"}
    Z = np.loadtxt(out / "embedding.csv", delimiter=",")
    assert Z.shape == (60, 16)
    log_lines = (out / "train_log.csv").read_text().splitlines()
    assert log_lines[0] == cli.LOG_HEADER and len(log_lines) == 46
    assert [int(line.split(",")[0]) for line in log_lines[1:]] == list(range(45))
    rep = json.loads((out / "metrics.json").read_text())
    assert {"acc", "nmi", "ari"} <= set(rep)
    assert (out / "model.npz").exists()
    assert not list(out.glob(".*.tmp"))


def test_cluster_deterministic_and_config_replay(sim_dir, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    _cluster(sim_dir, a)
    _cluster(sim_dir, b)
    assert (a / "labels.csv").read_bytes() == (b / "labels.csv").read_bytes()
    assert cli.main(["cluster", "--config", str(a / "config.ini"), "--out", str(c)]) == 0
    assert (a / "labels.csv").read_bytes() == (c / "labels.csv").read_bytes()


def test_flag_overrides_file(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[train]\ngamma = 3\nalpha = 0.2\n[preprocess]\ntop_genes = 10\n")
    s = cli.resolve_config(cfg, {("train", "gamma"): 7.0})
    assert s["train"]["gamma"] == 7.0 and s["train"]["alpha"] == 0.2
    assert s["preprocess"]["top_genes"] == 10
    assert s["train"]["beta"] == 15.0


def test_config_roundtrip_text(tmp_path):
    s = cli.resolve_config(None, {("train", "hidden"): (8, 4), ("preprocess", "top_genes"): None})
    path = tmp_path / "echo.ini"
    path.write_text(cli.config_text(s))
    assert cli.resolve_config(path) == s


@pytest.mark.parametrize("text,msg", [("[bogus]\nx = 1\n", "section"), ("[train]\nfoo = 1\n", "foo"),
                                      ("[train]\ngamma = abc\n", "gamma")])
def test_bad_config(tmp_path, text, msg):
    cfg = tmp_path / "c.ini"
    cfg.write_text(text)
    with pytest.raises(cli.ConfigError, match=msg):
        cli.resolve_config(cfg)


def test_missing_input_no_outputs(tmp_path, capsys):
    out = tmp_path / "never"
    rc = cli.main(["cluster", "--input", str(tmp_path / "missing.csv"), "--out", str(out)])
    assert rc != 0
    assert "missing.csv" in capsys.readouterr().err
    assert not out.exists()


def test_training_error_leaves_no_outputs(sim_dir, tmp_path, capsys):
    out = tmp_path / "run"
    rc = _cluster(sim_dir, out, "--clusters", "1")
    assert rc != 0 and "error" in capsys.readouterr().err
    assert not out.exists() or not any(out.iterdir())


def test_eval(tmp_path, capsys):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    a.write_text("0\n0\n1\n2\n")
    b.write_text("2\n2\n0\n1\n")
    c.write_text("0\n1\n")
    assert cli.main(["eval", str(a), str(a)]) == 0
    assert capsys.readouterr().out.strip() == "acc=1.0000 nmi=1.0000 ari=1.0000"
    assert cli.main(["eval", str(a), str(b), "--out", str(tmp_path / "m.json")]) == 0
    assert json.loads((tmp_path / "m.json").read_text())["acc"] == 1.0
    assert cli.main(["eval", str(a), str(c)]) != 0


def test_select_k(sim_dir, tmp_path, capsys):
    out = tmp_path / "sk"
    rc = cli.main(["select-k", "--input", str(sim_dir / "counts.csv"), "--out", str(out), "--k-min", "2",
                   "--k-max", "4", "--pretrain-epochs", "20"])
    assert rc == 0
    rep = json.loads((out / "select_k.json").read_text())
    assert rep["best"] in (2, 3, 4) and set(rep["silhouette"]) == {"2", "3", "4"}
