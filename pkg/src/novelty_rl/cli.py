"""Command line entry point: ``novelty-rl <command> ...``.

Exit codes: 0 on success, 1 for usage or configuration errors, 2 when a run
fails at runtime.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .envs import EnvError, evaluate, make_env
from .harness import RunFailure, recompute_report, run_population, threshold_sweep, train_single
from .io import ConfigError, RunConfig, load_config, load_policy, resolve_config
from .plotting import UnsupportedEnvironmentError, plot_trajectories
from .strategies import STRATEGIES, StrategyConfigError

def _config(args) -> RunConfig:
    overrides = {
        "strategy": args.strategy,
        "seed": args.seed,
        "r0": args.r0,
        "ts": args.ts,
        "out_dir": args.out,
        "run_id": args.run_id,
        "episodes": args.episodes,
        "timesteps": args.timesteps,
    }
    if args.config:
        return load_config(args.config, overrides)
    return resolve_config({k: v for k, v in overrides.items() if v is not None})


def _r0(value: str):
    if value == "auto":
        return value
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError("r0 must be 'auto' or a number") from None


def cmd_train(args) -> int:
    cfg = _config(args)
    tp = train_single(cfg, args.refs or ())
    print(json.dumps({
        "policy_id": tp.policy_id,
        "policy_file": str(cfg.run_dir / "policies" / f"{tp.policy_id}.json"),
        "timesteps": tp.timesteps,
        "episodes": tp.episodes,
        "last_checkpoint": tp.checkpoints[-1] if tp.checkpoints else None,
    }))
    return 0


def cmd_population(args) -> int:
    cfg = _config(args)
    report = run_population(cfg)
    for row in report.summary():
        print(json.dumps(row))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    mults = args.multipliers if args.multipliers else None
    reports = threshold_sweep(cfg, mults)
    for m, rep in reports.items():
        for row in rep.summary():
            print(json.dumps({"multiplier": m} | row))
    return 0


def cmd_evaluate(args) -> int:
    policy = load_policy(args.policy)
    env = make_env(args.env, start=tuple(args.start) if args.start else None)
    res = evaluate(policy, env, args.trials, np.random.default_rng(args.seed))
    print(json.dumps({
        "mean_return": res.mean_return,
        "disk_fraction": res.disk_fraction,
        "modal_disk": res.modal_disk(),
    }))
    return 0


def cmd_plot(args) -> int:
    policies = [load_policy(p) for p in args.policies]
    env = make_env(args.env, start=tuple(args.start) if args.start else None)
    plot_trajectories(policies, env, args.episodes, args.output, np.random.default_rng(args.seed))
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "config.resolved").is_file():
        raise ConfigError(f"{run_dir} is not a run directory (no config.resolved)")
    report = recompute_report(run_dir)
    if args.write:
        report.write(run_dir)
    for row in report.summary():
        print(json.dumps(row))
    return 0


def _run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--seed", type=int)
    p.add_argument("--r0", type=_r0)
    p.add_argument("--ts", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--timesteps", type=int)
    p.add_argument("--out", help="output root directory")
    p.add_argument("--run-id", dest="run_id")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="novelty-rl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one policy of one strategy")
    _run_args(p)
    p.add_argument("--refs", nargs="+", metavar="POLICY_JSON", help="reference policy files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("population", help="PPO references plus a novelty population")
    _run_args(p)
    p.set_defaults(func=cmd_population)

    p = sub.add_parser("sweep", help="novelty population at several threshold multipliers")
    _run_args(p)
    p.add_argument("--multipliers", type=float, nargs="+")
    p.set_defaults(func=cmd_sweep)

    for name, func, help_ in (("evaluate", cmd_evaluate, "mean return of a saved policy"),
                              ("plot", cmd_plot, "SVG of sampled trajectories")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--env", default="four_reward_maze")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--start", type=float, nargs=2, metavar=("X", "Y"))
        p.set_defaults(func=func)
        if name == "evaluate":
            p.add_argument("--policy", required=True)
            p.add_argument("--trials", type=int, default=100)
        else:
            p.add_argument("policies", nargs="+")
            p.add_argument("--episodes", type=int, default=5)
            p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("report", help="recompute the report of a finished run")
    p.add_argument("run_dir")
    p.add_argument("--write", action="store_true", help="overwrite report.csv and summary.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, StrategyConfigError, EnvError, UnsupportedEnvironmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RunFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
