"""Policy files, run configs and CSV helpers."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .nn import GaussianPolicyParams, MlpParams

SEED_ENV_VAR = "NOVELTY_RL_SEED"


class ConfigError(ValueError):
    pass


# -- policies -----------------------------------------------------------------


def policy_to_dict(policy: GaussianPolicyParams) -> dict:
    mlp = policy.mlp
    return {
        "layer_dims": list(mlp.layer_dims),
        "weights": [w.tolist() for w in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
        "log_std": policy.log_std.tolist(),
        "metadata": policy.metadata,
    }


def policy_from_dict(data: dict) -> GaussianPolicyParams:
    try:
        mlp = MlpParams(
            tuple(data["layer_dims"]),
            tuple(np.array(w, dtype=np.float64) for w in data["weights"]),
            tuple(np.array(b, dtype=np.float64) for b in data["biases"]),
        )
        return GaussianPolicyParams(mlp, np.array(data["log_std"]), dict(data.get("metadata", {})))
    except KeyError as exc:
        raise ConfigError(f"policy file is missing field {exc}") from None


def dumps_policy(policy: GaussianPolicyParams) -> str:
    # json writes floats with repr(), which round-trips float64 exactly
    return json.dumps(policy_to_dict(policy), indent=1, sort_keys=True) + "\n"


def save_policy(policy: GaussianPolicyParams, path) -> None:
    Path(path).write_text(dumps_policy(policy))


def load_policy(path) -> GaussianPolicyParams:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"policy file not found: {path}")
    return policy_from_dict(json.loads(path.read_text()))


# -- run configuration ---------------------------------------------------------


@dataclass
class RunConfig:
    """Everything needed to reproduce a run; mirrors the config file keys."""

    env: str = "four_reward_maze"
    strategy: str = "ipd"
    r0: float | str = "auto"
    ts: int = 1
    wsr_weight: float = 10.0
    alpha: float | None = None
    tnb_variant: str = "literal"
    n_reference: int = 5
    n_novel: int = 5
    seed: int = 0
    episodes: int = 6100
    timesteps: int | None = None
    eval_trials: int = 100
    checkpoint_trials: int = 20
    novelty_trials: int = 100
    fixed_start: list[float] | None = None
    multipliers: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    out_dir: str = "out"
    run_id: str = "run"
    # PPO
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch_size: int = 64
    steps_per_update: int = 2048
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    lr: float = 3e-4
    n_envs: int = 16
    hidden2: int = 32

    @property
    def run_dir(self) -> Path:
        return Path(self.out_dir) / self.run_id

    def ppo_kwargs(self) -> dict:
        keys = ("gamma", "lam", "clip_eps", "epochs", "minibatch_size", "steps_per_update",
                "vf_coef", "ent_coef", "lr", "n_envs", "hidden2")
        return {k: getattr(self, k) for k in keys} | {"eval_trials": self.checkpoint_trials}

    def replace(self, **changes) -> "RunConfig":
        data = asdict(self)
        data.update(changes)
        return RunConfig(**data)


_KNOWN_KEYS = {f.name for f in fields(RunConfig)}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; values are JSON, falling back to bare strings."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = parse_config_text(path.read_text())
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return resolve_config(values)


def resolve_config(values: dict) -> RunConfig:
    values = dict(values)
    unknown = set(values) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from None
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.alpha is not None:
        if not 0.0 < cfg.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        cfg.wsr_weight = (1.0 - cfg.alpha) / cfg.alpha
    if cfg.r0 != "auto":
        try:
            cfg.r0 = float(cfg.r0)
        except (TypeError, ValueError):
            raise ConfigError(f"r0 must be 'auto' or a number, got {cfg.r0!r}") from None
    if cfg.n_reference < 0 or cfg.n_novel < 0:
        raise ConfigError("n_reference and n_novel must be >= 0")
    if cfg.n_novel > 0 and cfg.strategy != "ppo" and cfg.n_reference < 1:
        raise ConfigError("novelty strategies need n_reference >= 1")
    if any(m <= 0 for m in cfg.multipliers):
        raise ConfigError("threshold multipliers must be > 0")
    return cfg


def dumps_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in asdict(cfg).items())


# -- CSV ----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows_csv(path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def read_rows_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
