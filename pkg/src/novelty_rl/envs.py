"""Environment contract and the Four Reward Maze.

The maze is a continuous ``16 x 16`` square. Four reward disks of radius 1
sit at the edge midpoints; entering one ends the episode with that reward,
every other step costs 0.01. Observations are the raw ``(x, y)`` position.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nn import LOG_STD_MAX, LOG_STD_MIN

REWARD_REGION = "reward_region"
STEP_LIMIT = "step_limit"
NOVELTY_TERMINATION = "novelty_termination"
DONE_REASONS = (REWARD_REGION, STEP_LIMIT, NOVELTY_TERMINATION)

MAZE_SIZE = 16.0
STEP_PENALTY = -0.01
DISK_RADIUS = 1.0
# name -> (center, reward); top/down/left/right = +5/+5/+10/+1
REWARD_DISKS = {
    "top": ((8.0, 16.0), 5.0),
    "down": ((8.0, 0.0), 5.0),
    "left": ((0.0, 8.0), 10.0),
    "right": ((16.0, 8.0), 1.0),
}
DISK_NAMES = tuple(REWARD_DISKS)
_CENTERS = np.array([c for c, _ in REWARD_DISKS.values()])
_REWARDS = np.array([r for _, r in REWARD_DISKS.values()])

# Fixed evaluation start on the right-hand side, two units left of the +1 disk.
RIGHT_SIDE_START = (14.0, 8.0)


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    max_episode_steps: int
    name: str = ""

    def __post_init__(self):
        if any(lo >= hi for lo, hi in zip(self.action_low, self.action_high)):
            raise EnvError("action_low must be < action_high in every dimension")
        if self.max_episode_steps < 1:
            raise EnvError("max_episode_steps must be >= 1")


@dataclass(frozen=True)
class MazeState:
    position: tuple[float, float]
    t: int = 0


@dataclass(frozen=True)
class StepResult:
    next_state: MazeState
    reward: float
    done: bool
    done_reason: str | None = None


def disk_index(positions: np.ndarray) -> np.ndarray:
    """Index of the reward disk containing each position, or -1."""
    pos = np.atleast_2d(positions)
    d = np.linalg.norm(pos[:, None, :] - _CENTERS[None], axis=-1)
    inside = d <= DISK_RADIUS
    return np.where(inside.any(axis=1), inside.argmax(axis=1), -1)


def disk_name(position) -> str | None:
    idx = int(disk_index(np.asarray(position, dtype=np.float64))[0])
    return None if idx < 0 else DISK_NAMES[idx]


class FourRewardMaze:
    """Single-instance maze with ``reset``/``step`` plus batched helpers."""

    name = "four_reward_maze"

    def __init__(self, max_episode_steps: int = 100, start: tuple[float, float] | None = None):
        self.spec = EnvSpec(2, 2, (-1.0, -1.0), (1.0, 1.0), max_episode_steps, self.name)
        self.start = None if start is None else np.asarray(start, dtype=np.float64)
        self.state: MazeState | None = None

    # batched core ---------------------------------------------------------

    def sample_starts(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Uniform start positions outside every reward disk (rejection)."""
        if self.start is not None:
            return np.tile(self.start, (n, 1))
        out = np.empty((n, 2))
        for i in range(n):
            while True:
                p = rng.uniform(0.0, MAZE_SIZE, size=2)
                if disk_index(p)[0] < 0:
                    out[i] = p
                    break
        return out

    def transition(self, positions: np.ndarray, actions: np.ndarray):
        """Vectorised dynamics: returns ``(next_positions, rewards, hit_disk)``."""
        actions = np.asarray(actions, dtype=np.float64)
        if not np.all(np.isfinite(actions)):
            raise EnvError("non-finite action")
        a = np.clip(actions, -1.0, 1.0)
        nxt = np.clip(positions + a, 0.0, MAZE_SIZE)
        idx = disk_index(nxt)
        hit = idx >= 0
        rewards = np.where(hit, _REWARDS[np.maximum(idx, 0)], STEP_PENALTY)
        return nxt, rewards, hit

    # single-instance API --------------------------------------------------

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        pos = self.sample_starts(rng, 1)[0]
        self.state = MazeState((float(pos[0]), float(pos[1])), 0)
        return pos.copy()

    def step(self, action) -> StepResult:
        if self.state is None:
            raise EnvError("call reset() before step()")
        result = step(self.state, action, self.spec.max_episode_steps)
        self.state = result.next_state
        return result


def step(state: MazeState, action, max_episode_steps: int = 100) -> StepResult:
    """Pure maze transition from ``state``; counts this step toward the limit."""
    action = np.asarray(action, dtype=np.float64).reshape(1, 2)
    pos = np.asarray(state.position, dtype=np.float64).reshape(1, 2)
    nxt, rewards, hit = _MAZE.transition(pos, action)
    t = state.t + 1
    ns = MazeState((float(nxt[0, 0]), float(nxt[0, 1])), t)
    if hit[0]:
        return StepResult(ns, float(rewards[0]), True, REWARD_REGION)
    if t >= max_episode_steps:
        return StepResult(ns, STEP_PENALTY, True, STEP_LIMIT)
    return StepResult(ns, STEP_PENALTY, False, None)


_MAZE = FourRewardMaze()

ENV_REGISTRY: dict[str, Callable[..., FourRewardMaze]] = {"four_reward_maze": FourRewardMaze}


def make_env(name: str, **kwargs) -> FourRewardMaze:
    try:
        return ENV_REGISTRY[name](**kwargs)
    except KeyError:
        raise EnvError(f"unknown environment {name!r}; known: {sorted(ENV_REGISTRY)}") from None


# -- evaluation ---------------------------------------------------------------


@dataclass
class EvalResult:
    mean_return: float
    returns: np.ndarray
    lengths: np.ndarray
    terminal_positions: np.ndarray
    done_reasons: list[str]
    paths: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def disk_fraction(self) -> float:
        return float(np.mean([r == REWARD_REGION for r in self.done_reasons]))

    def terminal_disks(self) -> list[str | None]:
        return [disk_name(p) for p in self.terminal_positions]

    def modal_disk(self) -> str | None:
        disks = [d for d in self.terminal_disks() if d is not None]
        if not disks:
            return None
        # ties resolve to the first disk in DISK_NAMES order
        counts = {name: disks.count(name) for name in DISK_NAMES}
        return max(DISK_NAMES, key=lambda n: counts[n])


def _policy_actor(policy) -> Callable:
    """Turn a Gaussian policy (or a callable) into ``act(states, rng)``."""
    if callable(policy):
        return policy
    std = np.exp(np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX))

    def act(states, rng):
        mean = policy.mean(states)
        return mean + std * rng.standard_normal(mean.shape)

    return act


def uniform_random_policy(states, rng):
    return rng.uniform(-1.0, 1.0, size=(len(states), 2))


def evaluate(
    policy, env: FourRewardMaze, n_trials: int, rng: np.random.Generator, record_paths: bool = False
) -> EvalResult:
    """Run ``n_trials`` full episodes with stochastic actions, all in lockstep.

    ``policy`` is a :class:`GaussianPolicyParams` or a callable
    ``act(states, rng) -> actions``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    act = _policy_actor(policy)
    pos = env.sample_starts(rng, n_trials)
    returns = np.zeros(n_trials)
    lengths = np.zeros(n_trials, dtype=int)
    reasons: list[str | None] = [None] * n_trials
    active = np.ones(n_trials, dtype=bool)
    paths = [[p.copy()] for p in pos] if record_paths else []
    for t in range(1, env.spec.max_episode_steps + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        actions = act(pos[idx], rng)
        nxt, rew, hit = env.transition(pos[idx], actions)
        pos[idx] = nxt
        returns[idx] += rew
        lengths[idx] = t
        for k, i in enumerate(idx):
            if record_paths:
                paths[i].append(nxt[k].copy())
            if hit[k]:
                reasons[i] = REWARD_REGION
                active[i] = False
            elif t >= env.spec.max_episode_steps:
                reasons[i] = STEP_LIMIT
                active[i] = False
    return EvalResult(
        float(returns.mean()),
        returns,
        lengths,
        pos.copy(),
        reasons,  # type: ignore[arg-type]
        [np.array(p) for p in paths],
    )


def write_trajectory_csv(path, states, actions, rewards, done_reason: str) -> None:
    """Dump one episode as ``t, x, y, ax, ay, reward, done_reason``."""
    n = len(rewards)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "ax", "ay", "reward", "done_reason"])
        for t in range(n):
            reason = done_reason if t == n - 1 else ""
            w.writerow([t, repr(float(states[t][0])), repr(float(states[t][1])),
                        repr(float(actions[t][0])), repr(float(actions[t][1])),
                        repr(float(rewards[t])), reason])


def random_policy_return(env: FourRewardMaze, n_trials: int, rng: np.random.Generator) -> float:
    return evaluate(uniform_random_policy, env, n_trials, rng).mean_return

