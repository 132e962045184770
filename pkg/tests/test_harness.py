import json
import math
import warnings

import numpy as np
import pytest

from novelty_rl.harness import (
    ExperimentReport,
    PolicyRecord,
    RunFailure,
    episodes_to_timesteps,
    recompute_report,
    relative_novelty,
    run_population,
    sample_episodes,
    success_rate,
    threshold_sweep,
    train_single,
)
from novelty_rl.envs import FourRewardMaze
from novelty_rl.io import ConfigError, read_rows_csv, resolve_config
from novelty_rl.metric import read_matrix_csv
from novelty_rl.nn import make_policy

TINY = dict(episodes=24, steps_per_update=128, epochs=1, n_envs=4, eval_trials=6,
            checkpoint_trials=3, novelty_trials=4, minibatch_size=64)


def tiny(tmp_path, **kw):
    return resolve_config({**TINY, "out_dir": str(tmp_path), **kw})


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("NOVELTY_RL_SEED", raising=False)


def test_success_rate_examples():
    assert success_rate([[3, 5], [1, 2]], 4.0) == 0.5
    assert success_rate([[4.0, 4.0], [4.0]], 4.0) == 0.0
    finals = [1.0, 2.0, 3.0, 4.0]
    med = float(np.median(finals))
    assert success_rate([[f] for f in finals], med) == 0.5
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        assert success_rate([[], [9.0]], 1.0) == 0.5
    assert any("empty" in str(x.message) for x in w)


def _report(novelties):
    recs = [PolicyRecord(f"p{i}", "novel", "ipd", i, 0, 0.0, 0.0, u) for i, u in enumerate(novelties)]
    return ExperimentReport(recs, 0.0, math.nan, 1.0)


def test_relative_novelty_examples():
    rep = relative_novelty(_report([1.25, 0.0, 2.5]), 1.25)
    assert [r.relative_novelty for r in rep.records] == [1.0, 0.0, 2.0]
    with pytest.raises(ValueError):
        relative_novelty(_report([1.0]), 0.0)


def test_episodes_to_timesteps():
    assert episodes_to_timesteps([1000, 3000], 512) == 2048
    assert episodes_to_timesteps([2048], 2048) == 2048


def test_sample_episodes_count():
    pol = make_policy(2, 2, np.random.default_rng(0))
    assert len(sample_episodes(pol, FourRewardMaze(), 9, np.random.default_rng(1))) == 9


def test_population_k0_success_half(tmp_path):
    cfg = tiny(tmp_path, strategy="ppo", n_reference=4, n_novel=0, run_id="k0")
    rep = run_population(cfg)
    assert len(rep.records) == 4
    assert success_rate([[r.final_return] for r in rep.records], rep.baseline_median) == 0.5
    assert sum(r.success for r in rep.records) == 2
    assert np.mean([r.relative_novelty for r in rep.records]) == pytest.approx(1.0)
    ids, m, mean = read_matrix_csv(cfg.run_dir / "novelty_matrix.csv")
    assert ids == ["ref00", "ref01", "ref02", "ref03"] and m.shape == (4, 4)


def test_population_m1_k1_ppo_refs(tmp_path):
    cfg = tiny(tmp_path, strategy="ppo", n_reference=1, n_novel=1, run_id="m1")
    rep = run_population(cfg)
    novel = [r for r in rep.records if r.role == "novel"]
    assert len(novel) == 1 and novel[0].n_refs == 1
    manifest = json.loads((cfg.run_dir / "manifests" / "ppo00.json").read_text())
    assert manifest["ref_ids"] == ["ref00"]


def test_population_artifacts_and_determinism(tmp_path):
    cfg = tiny(tmp_path, strategy="ipd", n_reference=2, n_novel=2, ts=1, run_id="a")
    rep = run_population(cfg)
    run = cfg.run_dir
    for sub, n in (("policies", 4), ("metrics", 4), ("plots", 2)):
        assert len(list((run / sub).iterdir())) == n
    assert (run / "config.resolved").is_file()
    header = (run / "metrics" / "ipd00.csv").read_text().splitlines()[0]
    assert header == ("update_index,timesteps,mean_return,mean_episode_len,mean_novelty,"
                      "n_novelty_terminations,policy_loss,value_loss")
    m = json.loads((run / "manifests" / "ipd01.json").read_text())
    assert m["ref_ids"] == ["ref00", "ref01", "ipd00"] and m["r0"] == pytest.approx(rep.r0)
    pol = json.loads((run / "policies" / "ipd00.json").read_text())
    assert pol["metadata"]["strategy"] == "ipd" and pol["metadata"]["env_name"] == "four_reward_maze"
    rows = read_rows_csv(run / "report.csv")
    assert [r["policy_id"] for r in rows] == ["ref00", "ref01", "ipd00", "ipd01"]

    cfg2 = cfg.replace(run_id="b")
    run_population(cfg2)
    for f in sorted(p.relative_to(run) for p in run.rglob("*") if p.is_file()):
        if f.name == "config.resolved":
            continue
        assert (run / f).read_bytes() == (cfg2.run_dir / f).read_bytes(), f

    again = recompute_report(run)
    assert [r.row() for r in again.records] == [r.row() for r in rep.records]


def test_sweep_unit_multiplier_matches_population(tmp_path):
    cfg = tiny(tmp_path, strategy="ipd", n_reference=2, n_novel=1, ts=1, run_id="pop")
    pop = run_population(cfg)
    sweep = threshold_sweep(cfg.replace(run_id="sw"), [1.0])
    assert [r.row() for r in sweep[1.0].records] == [r.row() for r in pop.records]
    a = (cfg.run_dir / "policies" / "ipd00.json").read_bytes()
    b = (tmp_path / "sw" / "sweep_x1" / "policies" / "ipd00.json").read_bytes()
    assert a == b
    rows = read_rows_csv(tmp_path / "sw" / "sweep.csv")
    assert list(rows[0]) == ["multiplier", "r0", "return_q1", "return_median", "return_q3", "novelty_mean"]


def test_sweep_rejects_zero_multiplier(tmp_path):
    with pytest.raises(ConfigError):
        threshold_sweep(tiny(tmp_path, n_reference=2), [0.0, 1.0])


def test_auto_threshold_needs_references(tmp_path):
    with pytest.raises(ConfigError, match="auto"):
        train_single(tiny(tmp_path, strategy="ipd"), [])
    with pytest.raises(ConfigError):
        run_population(tiny(tmp_path, strategy="ipd", n_reference=1, n_novel=1))


def test_failure_leaves_error_manifest(tmp_path, monkeypatch):
    import novelty_rl.harness as h

    def boom(*a, **k):
        raise FloatingPointError("diverged")

    monkeypatch.setattr(h, "train", boom)
    cfg = tiny(tmp_path, strategy="ppo", n_reference=2, n_novel=0, run_id="bad")
    with pytest.raises(RunFailure):
        run_population(cfg)
    assert "diverged" in (cfg.run_dir / "error.json").read_text()
    assert (cfg.run_dir / "config.resolved").is_file()
