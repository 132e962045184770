import numpy as np
import pytest

from novelty_rl.io import (
    ConfigError,
    RunConfig,
    dumps_config,
    dumps_policy,
    load_config,
    load_policy,
    parse_config_text,
    read_rows_csv,
    resolve_config,
    save_policy,
    write_rows_csv,
)
from novelty_rl.nn import flatten_policy, make_policy


def test_policy_roundtrip_exact(tmp_path, rng):
    pol = make_policy(2, 2, rng, metadata={"seed": 3, "strategy": "ipd", "env_name": "four_reward_maze"})
    path = tmp_path / "p.json"
    save_policy(pol, path)
    back = load_policy(path)
    assert np.array_equal(flatten_policy(back), flatten_policy(pol))
    assert back.metadata == pol.metadata
    assert dumps_policy(back) == path.read_text()
    import json

    data = json.loads(path.read_text())
    assert set(data) == {"layer_dims", "weights", "biases", "log_std", "metadata"}


def test_load_policy_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_policy(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text('{"layer_dims": [2, 1]}')
    with pytest.raises(ConfigError):
        load_policy(bad)


def test_parse_config_text():
    vals = parse_config_text('# comment\nstrategy = ipd\nr0 = auto\nts = 3\nmultipliers = [0.5, 2]\n\n')
    assert vals == {"strategy": "ipd", "r0": "auto", "ts": 3, "multipliers": [0.5, 2]}
    with pytest.raises(ConfigError):
        parse_config_text("nonsense line")
    with pytest.raises(ConfigError):
        parse_config_text("learning_speed = 3")


def test_resolve_config(monkeypatch):
    monkeypatch.delenv("NOVELTY_RL_SEED", raising=False)
    cfg = resolve_config({"strategy": "wsr", "alpha": 0.25, "r0": "1.5"})
    assert cfg.wsr_weight == pytest.approx(3.0) and cfg.r0 == 1.5
    monkeypatch.setenv("NOVELTY_RL_SEED", "42")
    assert resolve_config({"seed": 1}).seed == 42
    monkeypatch.setenv("NOVELTY_RL_SEED", "x")
    with pytest.raises(ConfigError):
        resolve_config({})
    monkeypatch.delenv("NOVELTY_RL_SEED")
    for bad in ({"alpha": 1.5}, {"r0": "high"}, {"multipliers": [0.0, 1.0]},
                {"n_reference": 0, "strategy": "ipd"}, {"foo": 1}):
        with pytest.raises(ConfigError):
            resolve_config(bad)


def test_config_file_roundtrip(tmp_path, monkeypatch):
    monkeypatch.delenv("NOVELTY_RL_SEED", raising=False)
    cfg = RunConfig(strategy="ctnb", r0=0.75, seed=9, fixed_start=[14.0, 8.0])
    path = tmp_path / "c.cfg"
    path.write_text(dumps_config(cfg))
    assert load_config(path) == cfg
    assert load_config(path, {"seed": 2, "ts": None}).seed == 2
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_rows_csv(tmp_path):
    path = tmp_path / "m.csv"
    write_rows_csv(path, ("a", "b", "c"), [{"a": 1, "b": 0.1, "c": True}])
    assert path.read_text() == "a,b,c\n1,0.1,True\n"
    assert read_rows_csv(path) == [{"a": "1", "b": "0.1", "c": "True"}]
