"""Policy distances and novelty against a set of reference policies.

Distances between policies use the deterministic part of each policy (the
action mean) and the Euclidean norm, averaged over states the evaluated
policy actually visits. Novelty is the smallest such average over the
reference set.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

from .nn import GaussianPolicyParams


class EmptyStatesError(ValueError):
    """No visited states were supplied to a state-averaged estimator."""


@dataclass(frozen=True)
class ReferenceSet:
    """Ordered, immutable collection of previously trained policies."""

    policies: tuple[GaussianPolicyParams, ...] = ()
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        ids = tuple(self.ids) or tuple(f"ref{i}" for i in range(len(self.policies)))
        if len(ids) != len(self.policies):
            raise ValueError("one id per reference policy is required")
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.policies)

    def __iter__(self):
        return iter(self.policies)

    def append(self, policy: GaussianPolicyParams, policy_id: str) -> "ReferenceSet":
        return ReferenceSet(self.policies + (policy,), self.ids + (policy_id,))

    def means(self, states: np.ndarray) -> np.ndarray:
        """Reference action means, shape ``(n_refs, n_states, action_dim)``."""
        states = np.atleast_2d(states)
        return np.stack([p.mean(states) for p in self.policies])


@dataclass
class NoveltyTrace:
    """Per-step novelty rewards of one episode and their running mean."""

    per_step: list[float] = field(default_factory=list)
    running_mean: list[float] = field(default_factory=list)
    _total: float = field(default=0.0, repr=False)

    def push(self, r_int: float) -> None:
        """In-place append; the hot path used during rollouts."""
        if not r_int >= 0.0:
            raise ValueError(f"novelty reward must be >= 0, got {r_int}")
        self.per_step.append(float(r_int))
        self._total += float(r_int)
        self.running_mean.append(self._total / len(self.per_step))

    def __len__(self) -> int:
        return len(self.per_step)


def update_trace(trace: NoveltyTrace, r_int: float) -> NoveltyTrace:
    """Return a new trace with ``r_int`` appended."""
    new = NoveltyTrace(list(trace.per_step), list(trace.running_mean), trace._total)
    new.push(r_int)
    return new


def wasserstein2_gaussian(m1, s1, m2, s2) -> float:
    """W2 distance between two diagonal Gaussians given per-dimension std devs."""
    m1, s1, m2, s2 = (np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (m1, s1, m2, s2))
    if not (m1.shape == s1.shape == m2.shape == s2.shape):
        raise ValueError("all inputs must share one dimension")
    if np.any(s1 < 0) or np.any(s2 < 0):
        raise ValueError("standard deviations must be non-negative")
    return float(math.sqrt(np.sum((m1 - m2) ** 2) + np.sum((s1 - s2) ** 2)))


def policy_w2_distance(
    p1: GaussianPolicyParams, p2: GaussianPolicyParams, states: np.ndarray
) -> float:
    """State-averaged W2 distance between two Gaussian policies (log_std included)."""
    states = np.atleast_2d(states)
    dm = p1.mean(states) - p2.mean(states)
    ds = np.exp(p1.log_std) - np.exp(p2.log_std)
    per_state = np.sqrt(np.sum(dm * dm, axis=1) + np.sum(ds * ds))
    return float(per_state.mean())


def _states_of(traj) -> np.ndarray:
    states = getattr(traj, "states", traj)
    return np.atleast_2d(np.asarray(states, dtype=np.float64))


def _pool_states(trajectories: Iterable) -> np.ndarray:
    chunks = [_states_of(t) for t in trajectories]
    chunks = [c for c in chunks if c.size]
    if not chunks:
        raise EmptyStatesError("no visited states")
    return np.concatenate(chunks, axis=0)


def mean_distances(
    policy: GaussianPolicyParams, refs: ReferenceSet, states: np.ndarray
) -> np.ndarray:
    """Distance to each reference at each state, shape ``(n_refs, n_states)``."""
    states = np.atleast_2d(states)
    own = policy.mean(states)
    return np.linalg.norm(refs.means(states) - own[None], axis=-1)


def pointwise_novelty(policy: GaussianPolicyParams, refs: ReferenceSet, state) -> float | np.ndarray:
    """Smallest distance to any reference at a state (``inf`` if ``refs`` is empty).

    Given a batch of states, returns one value per state.
    """
    state = np.asarray(state, dtype=np.float64)
    single = state.ndim == 1
    if len(refs) == 0:
        return math.inf if single else np.full(len(state), math.inf)
    per_state = mean_distances(policy, refs, state).min(axis=0)
    return float(per_state[0]) if single else per_state


def policy_novelty(policy: GaussianPolicyParams, refs: ReferenceSet, trajectories) -> float:
    """Novelty of ``policy``: min over references of the state-averaged distance.

    ``trajectories`` should come from ``policy`` itself; their visited states
    are pooled and weighted equally.
    """
    states = _pool_states(trajectories)
    if len(refs) == 0:
        return math.inf
    return float(mean_distances(policy, refs, states).mean(axis=1).min())


def pairwise_novelty_matrix(
    population: Sequence[GaussianPolicyParams], eval_trajectories: Sequence
) -> tuple[np.ndarray, float]:
    """Matrix of ``U(theta_i | {theta_j})`` over policy i's own trajectories.

    Returns the matrix and its off-diagonal mean.
    """
    n = len(population)
    if n < 2:
        raise ValueError("need at least two policies")
    if len(eval_trajectories) != n:
        raise ValueError("one list of trajectories per policy is required")
    matrix = np.zeros((n, n))
    for i, policy in enumerate(population):
        states = _pool_states(eval_trajectories[i])
        own = policy.mean(states)
        for j, other in enumerate(population):
            if i != j:
                d = np.linalg.norm(other.mean(states) - own, axis=-1)
                matrix[i, j] = d.mean()
    off = matrix[~np.eye(n, dtype=bool)]
    return matrix, float(off.mean())


def visitation_estimate(
    trajectories: Sequence, bin_fn: Callable[[object], Hashable] = lambda s: s
) -> dict:
    """Per-cell visit counts divided by the number of trajectories."""
    counts: Counter = Counter()
    n = 0
    for traj in trajectories:
        n += 1
        states = getattr(traj, "states", traj)
        for s in states:
            counts[bin_fn(s)] += 1
    if n == 0:
        return {}
    return {cell: c / n for cell, c in counts.items()}


def grid_bin(cell_size: float = 1.0, n_cells: int = 16) -> Callable:
    """Bin 2-D positions onto an ``n_cells x n_cells`` grid."""

    def _bin(s):
        ix = min(int(s[0] // cell_size), n_cells - 1)
        iy = min(int(s[1] // cell_size), n_cells - 1)
        return ix, iy

    return _bin


def write_matrix_csv(path, ids: Sequence[str], matrix: np.ndarray, mean_offdiag: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy_id", *ids])
        for pid, row in zip(ids, matrix):
            w.writerow([pid, *(repr(float(v)) for v in row)])
        w.writerow(["mean_offdiag", repr(float(mean_offdiag))])


def read_matrix_csv(path) -> tuple[list[str], np.ndarray, float]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    ids = rows[0][1:]
    matrix = np.array([[float(v) for v in r[1:]] for r in rows[1:-1]])
    return ids, matrix, float(rows[-1][1])


def write_trace_csv(path, trace: NoveltyTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "r_int", "running_mean"])
        for t, (r, m) in enumerate(zip(trace.per_step, trace.running_mean)):
            w.writerow([t, repr(r), repr(m)])
