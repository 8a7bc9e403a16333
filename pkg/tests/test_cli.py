import csv

import numpy as np
import pytest
import yaml

from throwsim.cli import TRACE_COLUMNS, main
from throwsim.dynamics import FrictionParams
from throwsim.evaluation import read_records
from throwsim.ppo import init_policy, load_checkpoint
from throwsim.sysid import ReleaseEventLog, synthetic_oscillation_log, write_oscillation_log, write_release_log

SMALL = {
    "seed": 2,
    "env": {"variant": "2d"},
    "train": {"n_envs": 4, "iterations": 1, "steps_per_iter": 8, "hidden": [16, 16], "minibatches": 1, "epochs": 1},
    "sweep": {"distances": [8.0], "repeats": 2},
}


def _config(tmp_path, name="run.yaml", **over):
    data = {**SMALL, **over}
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("train")
    cfg = _config(tmp)
    assert main(["train", "--config", str(cfg), "--out", str(tmp / "out")]) == 0
    return cfg, tmp / "out"


def test_train_outputs(trained):
    cfg, out = trained
    assert (out / "checkpoint.npz").exists() and (out / "config.yaml").exists()
    rows = list(csv.DictReader(open(out / "train_log.csv")))
    assert len(rows) == 1
    pol = load_checkpoint(out / "checkpoint.npz")
    assert pol.variant == "2d"


def test_zero_iterations_checkpoint_is_initialization(tmp_path):
    cfg = _config(tmp_path, train={**SMALL["train"], "iterations": 0, "obs_normalization": False})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    pol = load_checkpoint(tmp_path / "o" / "checkpoint.npz")
    rng = np.random.default_rng(np.random.SeedSequence(2).spawn(3)[0])
    ref = init_policy(rng, pol.params.actor[0][0].shape[0], pol.params.log_std.size, hidden=(16, 16))
    for a, b in zip(pol.params.arrays(), ref.arrays()):
        np.testing.assert_array_equal(a, b)


def test_eval_writes_reports(trained, tmp_path, capsys):
    cfg, out = trained
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.npz"), "--out", str(tmp_path)]) == 0
    assert "2 episodes" in capsys.readouterr().out
    assert len(read_records(tmp_path / "records.csv")) == 2
    assert len((tmp_path / "summary.csv").read_text().splitlines()) == 2


def test_eval_variant_mismatch(trained, tmp_path, capsys):
    _, out = trained
    cfg = _config(tmp_path, sweep={"variant": "3d", "distances": [8.0], "repeats": 1})
    code = main(["eval", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.npz"), "--out", str(tmp_path / "e")])
    assert code == 2
    assert "2d variant" in capsys.readouterr().err


def test_bad_inputs_exit_codes(tmp_path, trained):
    cfg, _ = trained
    bad_cfg = tmp_path / "bad.yaml"
    bad_cfg.write_text("env:\n  nope: 1\n")
    assert main(["train", "--config", str(bad_cfg)]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == 2
    junk = tmp_path / "junk.npz"
    junk.write_bytes(b"not a checkpoint")
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(junk), "--out", str(tmp_path / "e")]) == 3
    assert main(["identify", "delay", "--log", str(tmp_path / "none.csv")]) == 3
    assert main(["train", "--config", str(cfg), "--workers", "0"]) == 2
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


def test_identify_friction(tmp_path, capsys):
    log = tmp_path / "osc.csv"
    write_oscillation_log(log, synthetic_oscillation_log(FrictionParams(0.03, 0.1)))
    assert main(["identify", "friction", "--log", str(log), "--out", str(tmp_path)]) == 0
    report = yaml.safe_load((tmp_path / "friction.yaml").read_text())
    assert abs(report["upsilon"] - 0.03) <= 0.003 and abs(report["eta"] - 0.1) <= 0.01
    assert yaml.safe_load(capsys.readouterr().out) == report


def test_identify_delay(tmp_path, capsys):
    log = tmp_path / "rel.csv"
    write_release_log(log, ReleaseEventLog([1.0], [1.25]))
    assert main(["identify", "delay", "--log", str(log)]) == 0
    report = yaml.safe_load(capsys.readouterr().out)
    assert report["n"] == 1 and report["std"] == 0.0 and report["mean"] == pytest.approx(0.25)
    log.write_text("t_cmd,t_onset\n")
    assert main(["identify", "delay", "--log", str(log)]) == 3


def test_identify_unfittable_log_aborts(tmp_path):
    log = tmp_path / "short.csv"
    write_oscillation_log(log, synthetic_oscillation_log(FrictionParams(0.03, 0.1), duration=1.0))
    assert main(["identify", "friction", "--log", str(log)]) == 4


def test_rollout_trace(trained, tmp_path):
    cfg, out = trained
    args = ["rollout", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.npz"), "--distance", "8.0"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "trace.csv").read_bytes()
    assert a == (tmp_path / "b" / "trace.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a" / "trace.csv")))
    assert list(rows[0]) == TRACE_COLUMNS
    t = np.array([float(r["time"]) for r in rows])
    np.testing.assert_allclose(np.diff(t), 0.01, atol=1e-12)
    assert sum(r["event"] == "release" for r in rows) <= 1


def test_env_overrides(trained, tmp_path, monkeypatch):
    cfg, _ = trained
    monkeypatch.setenv("THROWSIM_SEED", "9")
    monkeypatch.setenv("THROWSIM_OUT", str(tmp_path / "envout"))
    assert main(["train", "--config", str(cfg)]) == 0
    snap = yaml.safe_load((tmp_path / "envout" / "config.yaml").read_text())
    assert snap["seed"] == 9 and snap["output_dir"] == str(tmp_path / "envout")
    assert main(["train", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "flag")]) == 0
    assert yaml.safe_load((tmp_path / "flag" / "config.yaml").read_text())["seed"] == 4
    monkeypatch.setenv("THROWSIM_SEED", "x")
    assert main(["train", "--config", str(cfg)]) == 2
