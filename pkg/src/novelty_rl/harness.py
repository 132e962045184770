"""Population training, reports, threshold sweeps.

A population run trains ``n_reference`` plain-PPO policies, derives the
novelty threshold from their pairwise distances, then trains ``n_novel``
policies one after another, each against every policy finished before it.
"""

from __future__ import annotations

import json
import logging
import math
import traceback
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .envs import RIGHT_SIDE_START, evaluate, make_env
from .io import (
    ConfigError,
    RunConfig,
    dumps_config,
    load_policy,
    save_policy,
    write_rows_csv,
)
from .metric import (
    ReferenceSet,
    pairwise_novelty_matrix,
    policy_novelty,
    write_matrix_csv,
)
from .nn import GaussianPolicyParams, make_policy
from .plotting import plot_trajectories
from .ppo import METRIC_COLUMNS, PpoConfig, Trajectory, collect_rollout, train
from .strategies import NoveltyConfig, make_strategy

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "policy_id", "role", "strategy", "seed", "n_refs", "final_return", "best_checkpoint",
    "novelty", "relative_novelty", "success", "fixed_start_disk",
)
SUMMARY_COLUMNS = (
    "group", "n_policies", "success_rate", "return_mean", "return_std",
    "novelty_mean", "novelty_std", "relative_novelty_mean", "n_distinct_disks",
)


class RunFailure(RuntimeError):
    pass


@dataclass
class PopulationRun:
    config: RunConfig

    @property
    def reference_seeds(self) -> list[int]:
        return [self.config.seed * 10_000 + i for i in range(self.config.n_reference)]

    @property
    def novel_seeds(self) -> list[int]:
        return [self.config.seed * 10_000 + 1_000 + k for k in range(self.config.n_novel)]


@dataclass
class PolicyRecord:
    policy_id: str
    role: str
    strategy: str
    seed: int
    n_refs: int
    final_return: float
    best_checkpoint: float
    novelty: float
    relative_novelty: float = math.nan
    success: bool = False
    fixed_start_disk: str = "none"
    checkpoints: list[float] = field(default_factory=list, repr=False)

    @property
    def group(self) -> str:
        if self.role == "reference":
            return "ppo"
        return self.strategy if self.strategy != "ppo" else "ppo_novel"

    def row(self) -> dict:
        return {c: getattr(self, c) for c in REPORT_COLUMNS}


@dataclass
class ExperimentReport:
    records: list[PolicyRecord]
    baseline_median: float
    ppo_mean_novelty: float
    r0: float

    def groups(self) -> dict[str, list[PolicyRecord]]:
        out: dict[str, list[PolicyRecord]] = {}
        for r in self.records:
            out.setdefault(r.group, []).append(r)
        return out

    def summary(self) -> list[dict]:
        rows = []
        for name, recs in self.groups().items():
            returns = np.array([r.final_return for r in recs])
            nov = np.array([r.novelty for r in recs])
            rel = np.array([r.relative_novelty for r in recs])
            rows.append({
                "group": name,
                "n_policies": len(recs),
                "success_rate": float(np.mean([r.success for r in recs])),
                "return_mean": float(returns.mean()),
                "return_std": float(returns.std()),
                "novelty_mean": float(nov.mean()),
                "novelty_std": float(nov.std()),
                "relative_novelty_mean": float(rel.mean()),
                "n_distinct_disks": len({r.fixed_start_disk for r in recs} - {"none"}),
            })
        return rows

    def write(self, run_dir: Path) -> None:
        write_rows_csv(run_dir / "report.csv", REPORT_COLUMNS, (r.row() for r in self.records))
        write_rows_csv(run_dir / "summary.csv", SUMMARY_COLUMNS, self.summary())


# -- small pure pieces ----------------------------------------------------------


def success_rate(training_traces: Sequence[Sequence[float]], baseline_median: float) -> float:
    """Fraction of traces with any checkpoint strictly above ``baseline_median``."""
    if not training_traces:
        return 0.0
    wins = 0
    for trace in training_traces:
        if len(trace) == 0:
            warnings.warn("empty training trace counts as unsuccessful", stacklevel=2)
            continue
        wins += any(v > baseline_median for v in trace)
    return wins / len(training_traces)


def relative_novelty(report: ExperimentReport, ppo_mean_novelty: float) -> ExperimentReport:
    """Divide every policy's novelty by the PPO population's mean novelty."""
    if not ppo_mean_novelty > 0:
        raise ValueError("PPO mean novelty must be > 0 (degenerate reference population)")
    for r in report.records:
        r.relative_novelty = r.novelty / ppo_mean_novelty
    report.ppo_mean_novelty = ppo_mean_novelty
    return report


def sample_episodes(policy, env, n: int, rng: np.random.Generator) -> list[Trajectory]:
    """Exactly ``n`` fresh on-policy episodes (one per parallel slot)."""
    return collect_rollout(policy, env, ReferenceSet(), None, 1, rng, n_envs=n)


def episodes_to_timesteps(timesteps_used: Sequence[int], steps_per_update: int) -> int:
    """Mean timesteps the PPO runs needed, rounded up to whole update batches."""
    mean = float(np.mean(timesteps_used))
    return int(math.ceil(mean / steps_per_update)) * steps_per_update


def _rngs(seed: int):
    """Independent streams: training, checkpoints, final eval, novelty, fixed start."""
    return tuple(np.random.default_rng([seed, k]) for k in range(5))


# -- training one policy ---------------------------------------------------------


@dataclass
class TrainedPolicy:
    policy_id: str
    policy: GaussianPolicyParams
    seed: int
    strategy: str
    role: str
    ref_ids: list[str]
    checkpoints: list[float]
    metrics: list[dict]
    timesteps: int
    episodes: int


def train_one(
    cfg: RunConfig,
    role: str,
    policy_id: str,
    seed: int,
    novelty_cfg: NoveltyConfig,
    refs: ReferenceSet,
    total_timesteps: int | None,
    total_episodes: int | None,
) -> TrainedPolicy:
    env = make_env(cfg.env)
    rng, ck_rng, *_ = _rngs(seed)
    r0 = novelty_cfg.r0
    meta = {
        "seed": seed,
        "strategy": novelty_cfg.strategy,
        "env_name": cfg.env,
        "r0": None if r0 == "auto" else r0,
        "ts": novelty_cfg.ts,
        "ref_ids": list(refs.ids),
    }
    policy = make_policy(env.spec.state_dim, env.spec.action_dim, rng, cfg.hidden2, meta)
    result = train(
        policy, env, make_strategy(novelty_cfg), refs, total_timesteps,
        PpoConfig(**cfg.ppo_kwargs()), rng, total_episodes=total_episodes, eval_rng=ck_rng,
    )
    return TrainedPolicy(
        policy_id, result.policy, seed, novelty_cfg.strategy, role, list(refs.ids),
        result.checkpoints, result.metrics, result.timesteps, result.episodes,
    )


def _save_trained(run_dir: Path, tp: TrainedPolicy, r0) -> None:
    save_policy(tp.policy, run_dir / "policies" / f"{tp.policy_id}.json")
    write_rows_csv(run_dir / "metrics" / f"{tp.policy_id}.csv", METRIC_COLUMNS, tp.metrics)
    manifest = {
        "policy_id": tp.policy_id,
        "role": tp.role,
        "seed": tp.seed,
        "strategy": tp.strategy,
        "ref_ids": tp.ref_ids,
        "r0": r0,
        "timesteps": tp.timesteps,
        "episodes": tp.episodes,
        "checkpoints": tp.checkpoints,
    }
    (run_dir / "manifests" / f"{tp.policy_id}.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    )


def _prepare_dir(run_dir: Path, cfg: RunConfig) -> None:
    for sub in ("policies", "metrics", "manifests", "plots"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    (run_dir / "config.resolved").write_text(dumps_config(cfg))


# -- evaluation of a finished population ----------------------------------------


def _fixed_start(cfg: RunConfig):
    return tuple(cfg.fixed_start) if cfg.fixed_start else RIGHT_SIDE_START


def evaluate_population(
    cfg: RunConfig,
    ppo: list[tuple[str, GaussianPolicyParams, int, list[float]]],
    novel: list[tuple[str, GaussianPolicyParams, int, list[float], str, list[str]]],
    r0: float,
) -> tuple[ExperimentReport, np.ndarray | None]:
    """Score saved or in-memory policies; deterministic given their seeds.

    PPO policies are scored for success on their final return only, which
    makes the PPO self-rate the definitional one; novel policies use their
    training checkpoints plus the final return.
    """
    env = make_env(cfg.env)
    fixed_env = make_env(cfg.env, start=_fixed_start(cfg))
    by_id: dict[str, GaussianPolicyParams] = {pid: p for pid, p, *_ in ppo}
    by_id.update({pid: p for pid, p, *_ in novel})

    def score(policy, seed):
        _, _, ev_rng, nov_rng, fix_rng = _rngs(seed)
        final = evaluate(policy, env, cfg.eval_trials, ev_rng).mean_return
        trajs = sample_episodes(policy, env, cfg.novelty_trials, nov_rng)
        disk = evaluate(policy, fixed_env, cfg.eval_trials, fix_rng).modal_disk() or "none"
        return final, trajs, disk

    records: list[PolicyRecord] = []
    ppo_trajs = []
    for pid, policy, seed, ckpts in ppo:
        final, trajs, disk = score(policy, seed)
        ppo_trajs.append(trajs)
        records.append(PolicyRecord(pid, "reference", "ppo", seed, max(len(ppo) - 1, 0), final,
                                    max(ckpts, default=math.nan), math.nan,
                                    fixed_start_disk=disk, checkpoints=list(ckpts)))
    matrix = None
    if len(ppo) >= 2:
        matrix, _ = pairwise_novelty_matrix([p for _, p, *_ in ppo], ppo_trajs)
        masked = matrix + np.diag(np.full(len(ppo), np.inf))
        for rec, row in zip(records, masked):
            rec.novelty = float(row.min())
    finals = [r.final_return for r in records]
    baseline = float(np.median(finals)) if finals else math.nan
    for rec in records:
        rec.success = rec.final_return > baseline

    for pid, policy, seed, ckpts, strategy, ref_ids in novel:
        final, trajs, disk = score(policy, seed)
        refs = ReferenceSet(tuple(by_id[r] for r in ref_ids), tuple(ref_ids))
        nov = policy_novelty(policy, refs, trajs) if ref_ids else math.inf
        trace = list(ckpts) + [final]
        records.append(PolicyRecord(pid, "novel", strategy, seed, len(ref_ids), final,
                                    max(ckpts, default=math.nan), nov,
                                    success=success_rate([trace], baseline) == 1.0,
                                    fixed_start_disk=disk, checkpoints=list(ckpts)))

    ppo_nov = [r.novelty for r in records[: len(ppo)] if math.isfinite(r.novelty)]
    report = ExperimentReport(records, baseline, math.nan, r0)
    if ppo_nov and np.mean(ppo_nov) > 0:
        relative_novelty(report, float(np.mean(ppo_nov)))
    return report, matrix


# -- population / sweep ------------------------------------------------------------


def _reference_phase(cfg: RunConfig, run: PopulationRun, run_dir: Path):
    ppo_cfg = NoveltyConfig("ppo", ts=cfg.ts)
    trained = []
    for i, seed in enumerate(run.reference_seeds):
        budget_steps = cfg.timesteps
        budget_eps = None if cfg.timesteps else cfg.episodes
        tp = train_one(cfg, "reference", f"ref{i:02d}", seed, ppo_cfg, ReferenceSet(), budget_steps, budget_eps)
        _save_trained(run_dir, tp, None)
        trained.append(tp)
        log.info("trained %s: %d episodes, %d steps", tp.policy_id, tp.episodes, tp.timesteps)
    return trained


def _auto_threshold(cfg: RunConfig, refs: list[TrainedPolicy]) -> float:
    if len(refs) < 2:
        raise ConfigError("r0 = 'auto' needs at least two reference policies")
    env = make_env(cfg.env)
    trajs = [sample_episodes(tp.policy, env, cfg.novelty_trials, _rngs(tp.seed)[3]) for tp in refs]
    _, mean = pairwise_novelty_matrix([tp.policy for tp in refs], trajs)
    return mean


def _novel_phase(cfg, run, run_dir, refs_trained, r0) -> list[TrainedPolicy]:
    ncfg = NoveltyConfig(cfg.strategy, r0 if cfg.strategy in ("ctnb", "ipd") else "auto",
                         cfg.ts, cfg.wsr_weight, cfg.tnb_variant)
    refs = ReferenceSet(tuple(t.policy for t in refs_trained), tuple(t.policy_id for t in refs_trained))
    if cfg.timesteps:
        budget = cfg.timesteps
    elif refs_trained:
        budget = episodes_to_timesteps([t.timesteps for t in refs_trained], cfg.steps_per_update)
    else:
        budget = None
    out = []
    for k, seed in enumerate(run.novel_seeds):
        tp = train_one(cfg, "novel", f"{cfg.strategy}{k:02d}", seed, ncfg, refs, budget,
                       None if budget else cfg.episodes)
        _save_trained(run_dir, tp, r0)
        out.append(tp)
        refs = refs.append(tp.policy, tp.policy_id)
        log.info("trained %s against %d refs", tp.policy_id, len(tp.ref_ids))
    return out


def _finish(cfg, run_dir, ppo_trained, novel_trained, r0) -> ExperimentReport:
    report, matrix = evaluate_population(
        cfg,
        [(t.policy_id, t.policy, t.seed, t.checkpoints) for t in ppo_trained],
        [(t.policy_id, t.policy, t.seed, t.checkpoints, t.strategy, t.ref_ids) for t in novel_trained],
        r0,
    )
    report.write(run_dir)
    if matrix is not None:
        write_matrix_csv(run_dir / "novelty_matrix.csv", [t.policy_id for t in ppo_trained],
                         matrix, float(matrix[~np.eye(len(matrix), dtype=bool)].mean()))
    env = make_env(cfg.env, start=_fixed_start(cfg))
    for name, group in (("reference", ppo_trained), ("novel", novel_trained)):
        if group:
            plot_trajectories([t.policy for t in group], env, 1, run_dir / "plots" / f"{name}.svg",
                              np.random.default_rng([cfg.seed, 99]))
    return report


def _guarded(run_dir: Path, fn, *args):
    try:
        return fn(*args)
    except ConfigError:
        raise
    except Exception as exc:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "error.json").write_text(json.dumps(
            {"error": repr(exc), "traceback": traceback.format_exc()}, indent=1) + "\n")
        raise RunFailure(f"run failed: {exc!r} (partial artifacts kept in {run_dir})") from exc


def run_population(cfg: RunConfig) -> ExperimentReport:
    """Train the PPO references and the novelty population; write all artifacts."""
    run_dir = cfg.run_dir
    return _guarded(run_dir, _run_population, cfg, run_dir)


def _run_population(cfg: RunConfig, run_dir: Path) -> ExperimentReport:
    run = PopulationRun(cfg)
    needs_r0 = cfg.strategy in ("ctnb", "ipd") and cfg.n_novel > 0
    if needs_r0 and cfg.r0 == "auto" and cfg.n_reference < 2:
        raise ConfigError("r0 = 'auto' needs n_reference >= 2")
    _prepare_dir(run_dir, cfg)
    ppo_trained = _reference_phase(cfg, run, run_dir)
    r0 = math.nan
    if cfg.r0 != "auto":
        r0 = float(cfg.r0)
    elif len(ppo_trained) >= 2:
        r0 = _auto_threshold(cfg, ppo_trained)
    novel = _novel_phase(cfg, run, run_dir, ppo_trained, r0) if cfg.n_novel else []
    return _finish(cfg, run_dir, ppo_trained, novel, r0)


def train_single(cfg: RunConfig, reference_paths: Sequence = ()) -> TrainedPolicy:
    """Train one policy of ``cfg.strategy`` against policies loaded from files."""
    refs = ReferenceSet(
        tuple(load_policy(p) for p in reference_paths),
        tuple(Path(p).stem for p in reference_paths),
    )
    r0 = cfg.r0
    if cfg.strategy in ("ctnb", "ipd") and r0 == "auto":
        if len(refs) < 2:
            raise ConfigError("r0 = 'auto' needs a reference set of at least two policies (--refs)")
        env = make_env(cfg.env)
        rng = np.random.default_rng([cfg.seed, 3])
        trajs = [sample_episodes(p, env, cfg.novelty_trials, rng) for p in refs.policies]
        _, r0 = pairwise_novelty_matrix(list(refs.policies), trajs)
    if cfg.strategy != "ppo" and not len(refs):
        raise ConfigError(f"strategy {cfg.strategy!r} needs at least one reference policy (--refs)")
    ncfg = NoveltyConfig(cfg.strategy, r0 if cfg.strategy in ("ctnb", "ipd") else "auto",
                         cfg.ts, cfg.wsr_weight, cfg.tnb_variant)
    run_dir = cfg.run_dir
    _prepare_dir(run_dir, cfg)

    def go():
        tp = train_one(cfg, "novel", f"{cfg.strategy}_s{cfg.seed}", cfg.seed, ncfg, refs,
                       cfg.timesteps, None if cfg.timesteps else cfg.episodes)
        _save_trained(run_dir, tp, None if r0 == "auto" else r0)
        return tp

    return _guarded(run_dir, go)


def threshold_sweep(cfg: RunConfig, multipliers: Sequence[float] | None = None) -> dict[float, ExperimentReport]:
    """Novelty phase repeated at ``multiplier * auto r0`` over shared PPO references."""
    mults = list(cfg.multipliers if multipliers is None else multipliers)
    if any(not m > 0 for m in mults):
        raise ConfigError("threshold multipliers must be > 0")
    run_dir = cfg.run_dir
    return _guarded(run_dir, _threshold_sweep, cfg, mults, run_dir)


def _threshold_sweep(cfg: RunConfig, mults, run_dir: Path):
    if cfg.n_reference < 2:
        raise ConfigError("a threshold sweep needs n_reference >= 2")
    run = PopulationRun(cfg)
    _prepare_dir(run_dir, cfg)
    ppo_trained = _reference_phase(cfg, run, run_dir)
    base_r0 = _auto_threshold(cfg, ppo_trained) if cfg.r0 == "auto" else float(cfg.r0)
    reports: dict[float, ExperimentReport] = {}
    rows = []
    for m in mults:
        sub = run_dir / f"sweep_x{m:g}"
        _prepare_dir(sub, cfg)
        for tp in ppo_trained:
            _save_trained(sub, tp, None)
        novel = _novel_phase(cfg, run, sub, ppo_trained, m * base_r0)
        report = _finish(cfg, sub, ppo_trained, novel, m * base_r0)
        reports[m] = report
        recs = [r for r in report.records if r.role == "novel"]
        rets = np.array([r.final_return for r in recs])
        q1, med, q3 = np.percentile(rets, [25, 50, 75])
        rows.append({
            "multiplier": float(m), "r0": m * base_r0, "return_q1": float(q1),
            "return_median": float(med), "return_q3": float(q3),
            "novelty_mean": float(np.mean([r.novelty for r in recs])),
        })
    write_rows_csv(run_dir / "sweep.csv",
                   ("multiplier", "r0", "return_q1", "return_median", "return_q3", "novelty_mean"),
                   rows)
    return reports


# -- recomputation from disk -----------------------------------------------------


def recompute_report(run_dir) -> ExperimentReport:
    """Rebuild the report of a finished run from its saved artifacts."""
    from .io import load_config

    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.resolved")
    manifests = sorted((run_dir / "manifests").glob("*.json"))
    if not manifests:
        raise ConfigError(f"no manifests under {run_dir}")
    ppo, novel, r0 = [], [], math.nan
    for path in manifests:
        m = json.loads(path.read_text())
        policy = load_policy(run_dir / "policies" / f"{m['policy_id']}.json")
        if m["role"] == "reference":
            ppo.append((m["policy_id"], policy, m["seed"], m["checkpoints"]))
        else:
            novel.append((m["policy_id"], policy, m["seed"], m["checkpoints"],
                          m["strategy"], m["ref_ids"]))
            r0 = m["r0"] if m["r0"] is not None else math.nan
    if not novel and cfg.r0 != "auto":
        r0 = float(cfg.r0)
    elif not novel and len(ppo) >= 2:
        env = make_env(cfg.env)
        trajs = [sample_episodes(p, env, cfg.novelty_trials, _rngs(s)[3]) for _, p, s, _ in ppo]
        _, r0 = pairwise_novelty_matrix([p for _, p, *_ in ppo], trajs)
    report, _ = evaluate_population(cfg, ppo, novel, r0)
    return report
