import pytest
import yaml

from throwsim.config import (
    ConfigError,
    RunConfig,
    dump_run_config,
    load_run_config,
    run_config_from_dict,
    sweep_config_from_dict,
)


def test_defaults_are_valid():
    cfg = run_config_from_dict({})
    assert cfg == RunConfig()
    assert cfg.env.reward is cfg.env.reward_3d
    cfg.env.variant = "2d"
    assert cfg.env.reward is cfg.env.reward_2d


@pytest.mark.parametrize(
    "data, match",
    [
        ({"env": {"bogus": 1}}, "unknown config key: env.bogus"),
        ({"train": {"reward": {}}}, "unknown config key: train.reward"),
        ({"seeed": 1}, "unknown config key: seeed"),
        ({"seed": "one"}, "seed must be a number"),
        ({"train": {"iterations": 2.5}}, "train.iterations must be an integer"),
        ({"env": {"assist": 1}}, "env.assist must be a boolean"),
        ({"env": {"variant": "4d"}}, "variant"),
        ({"env": {"controller": "lqr"}}, "controller"),
        ({"env": {"reward_3d": {"c1": -1.0}}}, "env.reward_3d.c1 must be >= 0"),
        ({"env": {"reward_3d": {"p_term": 1.0}}}, "p_term"),
        ({"train": {"gamma": 1.5}}, "gamma"),
        ({"train": {"dtype": "float16"}}, "dtype"),
        ({"sweep": {"distances": []}}, "distances"),
        ({"sweep": {"repeats": 0}}, "repeats"),
        ({"workers": 0}, "workers"),
        ({"env": []}, "env must be a mapping"),
        ({"model": "no_such_machine.yaml"}, "not found"),
    ],
)
def test_invalid_configs(data, match):
    with pytest.raises(ConfigError, match=match):
        run_config_from_dict(data)


def test_integral_floats_accepted():
    assert run_config_from_dict({"train": {"iterations": 10.0}}).train.iterations == 10


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("env: [unclosed\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_run_config(bad)


def test_model_path_resolved_relative_to_config(tmp_path, nominal_dict):
    (tmp_path / "m.yaml").write_text(yaml.safe_dump(nominal_dict))
    (tmp_path / "run.yaml").write_text("model: m.yaml\n")
    cfg = load_run_config(tmp_path / "run.yaml")
    assert cfg.model == str(tmp_path / "m.yaml")


def test_dump_load_round_trip_and_hash(tmp_path):
    cfg = run_config_from_dict({"seed": 3, "env": {"variant": "2d"}, "train": {"hidden": [64, 32]}})
    dump_run_config(cfg, tmp_path / "c.yaml")
    back = load_run_config(tmp_path / "c.yaml")
    assert back == cfg and back.hash() == cfg.hash()
    back.seed = 4
    assert back.hash() != cfg.hash()


def test_sweep_from_dict():
    s = sweep_config_from_dict({"distances": [8, 9], "repeats": 2})
    assert s.distances == [8, 9] and s.variant == "2d"
    with pytest.raises(ConfigError, match="unknown config key: sweep.n"):
        sweep_config_from_dict({"n": 3})


def test_shipped_configs_load():
    from pathlib import Path

    for p in sorted((Path(__file__).parents[1] / "configs").glob("*.yaml")):
        load_run_config(p)
