import re

import pytest

from hichord.cli import main


@pytest.fixture
def conf(tmp_path):
    p = tmp_path / "small.conf"
    p.write_text("model = hierarchical\nN = 120\nU = 6\nS = 24\nlookups = 300\n"
                 "join_rate = 1\nleave_rate = 1\nfail_fraction = 0.2\nchurn_events = 80\n")
    return p


def test_run_writes_csv_and_log(conf, tmp_path, capsys):
    out, log = tmp_path / "o.csv", tmp_path / "e.log"
    assert main(["run", "--config", str(conf), "--seed", "3", "--out", str(out), "--log", str(log)]) == 0
    assert out.read_text().startswith("model,N,U,S,m,Q,seed,")
    assert ",3," in out.read_text().splitlines()[1]
    assert main(["replay", "--log", str(log)]) == 0
    assert "identical" in capsys.readouterr().out


def test_seed_falls_back_to_env(conf, tmp_path, monkeypatch):
    monkeypatch.setenv("SIM_SEED", "42")
    out = tmp_path / "o.csv"
    assert main(["run", "--config", str(conf), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[1].split(",")[6] == "42"


def test_replay_detects_tampering(conf, tmp_path):
    log = tmp_path / "e.log"
    main(["run", "--config", str(conf), "--out", str(tmp_path / "o.csv"), "--log", str(log)])
    lines = log.read_text().splitlines()
    i = next(i for i, l in enumerate(lines) if ",lookup," in l)
    lines[i] = re.sub(r"hops=\d+", "hops=99", lines[i], count=1)
    log.write_text("\n".join(lines) + "\n")
    assert main(["replay", "--log", str(log)]) == 2


def test_sweep(tmp_path):
    d = tmp_path / "cfgs"
    d.mkdir()
    (d / "a.conf").write_text("model = flat\nN = 64\nlookups = 100\n")
    (d / "b.conf").write_text("N = 64\nU = 4\nS = 16\nlookups = 100\n")
    out = tmp_path / "s.csv"
    assert main(["sweep", "--configs", str(d), "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3


def test_oracle_check_exit_codes(tmp_path):
    p = tmp_path / "m6.conf"
    p.write_text("N = 40\nU = 4\nS = 10\nm = 6\n")
    assert main(["oracle-check", "--config", str(p), "--samples", "0", "--exhaustive"]) == 0
    big = tmp_path / "m12.conf"
    big.write_text("N = 40\nU = 4\nS = 10\nm = 12\n")
    assert main(["oracle-check", "--config", str(big), "--samples", "10", "--exhaustive"]) == 1


def test_config_errors_exit_one(tmp_path):
    bad = tmp_path / "bad.conf"
    bad.write_text("N = 5\nU = 2\nS = 1\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert main(["run", "--config", str(tmp_path / "nope.conf")]) == 1
    assert main(["run", "--config", str(bad.parent / "bad.conf"), "--seed", "-1"]) == 1
