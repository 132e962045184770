"""PPO backbone: rollouts with novelty bookkeeping, GAE, clipped updates.

The policy update produces two gradients per minibatch, one from the task
reward surrogate and one from the novelty surrogate, and hands both to a
strategy-supplied combiner before the optimizer step. Rollouts accept a
strategy-supplied termination hook that can end an episode early.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .envs import NOVELTY_TERMINATION, REWARD_REGION, STEP_LIMIT, evaluate
from .metric import NoveltyTrace, ReferenceSet, policy_novelty
from .nn import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    AdamState,
    GaussianPolicyParams,
    adam_step,
    flatten_mlp,
    flatten_policy,
    forward,
    init_mlp,
    log_prob_and_vjp,
    mlp_flat_grad,
    unflatten_mlp,
    unflatten_policy,
)

log = logging.getLogger(__name__)

TerminationHook = Callable[[NoveltyTrace, int], bool]
Combiner = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


def never_terminate(trace: NoveltyTrace, t: int) -> bool:
    return False


def pass_through(g_f: np.ndarray, g_g: np.ndarray, novelty: float) -> np.ndarray:
    return g_f


@dataclass(frozen=True)
class PpoConfig:
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
    eval_trials: int = 20

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.clip_eps <= 0 or self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("clip_eps, epochs and minibatch_size must be positive")
        if self.steps_per_update < 1 or self.n_envs < 1:
            raise ValueError("steps_per_update and n_envs must be positive")


@dataclass
class Trajectory:
    """One episode. Rewards at index t are those received after acting in states[t]."""

    states: np.ndarray
    actions: np.ndarray
    action_means: np.ndarray
    log_probs: np.ndarray
    task_rewards: np.ndarray
    novelty_rewards: np.ndarray
    dones: np.ndarray
    done_reason: str
    running_novelty: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.task_rewards)

    @property
    def episode_return(self) -> float:
        return float(self.task_rewards.sum())


class _Slot:
    """In-progress episode buffers for one parallel environment."""

    __slots__ = ("pos", "t", "states", "actions", "means", "logps", "rewards", "novelty", "trace")

    def __init__(self, pos: np.ndarray):
        self.pos = pos
        self.t = 0
        self.states: list = []
        self.actions: list = []
        self.means: list = []
        self.logps: list = []
        self.rewards: list = []
        self.novelty: list = []
        self.trace = NoveltyTrace()

    def finish(self, reason: str) -> Trajectory:
        n = self.t
        dones = np.zeros(n, dtype=bool)
        dones[-1] = True
        return Trajectory(
            np.array(self.states),
            np.array(self.actions),
            np.array(self.means),
            np.array(self.logps),
            np.array(self.rewards),
            np.array(self.novelty),
            dones,
            reason,
            np.array(self.trace.running_mean),
        )


def collect_rollout(
    policy: GaussianPolicyParams,
    env,
    refs: ReferenceSet,
    termination_hook: TerminationHook | None,
    steps_target: int,
    rng: np.random.Generator,
    n_envs: int = 16,
) -> list[Trajectory]:
    """Collect complete episodes until at least ``steps_target`` transitions exist.

    ``n_envs`` episodes run in lockstep. A slot only starts a new episode while
    the transition count is below the target, so every returned episode is
    complete. Novelty rewards are the per-state distance to the nearest
    reference (zero when ``refs`` is empty). After each step that did not end
    the episode, ``termination_hook(trace, t)`` is asked whether to stop,
    where ``t`` is the number of steps taken so far.
    """
    hook = termination_hook or never_terminate
    log_std = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    half_log_2pi = 0.5 * math.log(2 * math.pi)
    max_steps = env.spec.max_episode_steps
    has_refs = len(refs) > 0

    trajectories: list[Trajectory] = []
    total = 0
    slots: list[_Slot | None] = []
    for _ in range(n_envs):
        slots.append(_Slot(env.sample_starts(rng, 1)[0]) if steps_target > 0 else None)

    while True:
        idx = [i for i, s in enumerate(slots) if s is not None]
        if not idx:
            break
        pos = np.array([slots[i].pos for i in idx])
        mean = forward(policy.mlp, pos)
        eps = rng.standard_normal(mean.shape)
        actions = mean + std * eps
        logp = np.sum(-log_std - half_log_2pi - 0.5 * eps * eps, axis=1)
        if has_refs:
            ref_means = refs.means(pos)
            r_int = np.linalg.norm(ref_means - mean[None], axis=-1).min(axis=0)
        else:
            r_int = np.zeros(len(idx))
        nxt, rewards, hit = env.transition(pos, actions)
        for k, i in enumerate(idx):
            slot = slots[i]
            slot.states.append(pos[k])
            slot.actions.append(actions[k])
            slot.means.append(mean[k])
            slot.logps.append(logp[k])
            slot.rewards.append(rewards[k])
            slot.novelty.append(r_int[k])
            slot.trace.push(r_int[k])
            slot.t += 1
            slot.pos = nxt[k]
            total += 1
            if hit[k]:
                reason = REWARD_REGION
            elif slot.t >= max_steps:
                reason = STEP_LIMIT
            elif hook(slot.trace, slot.t):
                reason = NOVELTY_TERMINATION
            else:
                continue
            trajectories.append(slot.finish(reason))
            slots[i] = _Slot(env.sample_starts(rng, 1)[0]) if total < steps_target else None
    return trajectories


def gae(rewards, values, bootstrap_value, dones, gamma: float, lam: float):
    """Generalised advantage estimation over a (possibly concatenated) batch.

    ``dones[t]`` marks a terminal transition (no bootstrap past it).
    ``bootstrap_value`` is V of the state following the final transition.
    Returns ``(advantages, returns)``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not (rewards.shape == values.shape == dones.shape) or rewards.ndim != 1:
        raise ValueError("rewards, values and dones must be 1-D and equally long")
    n = len(rewards)
    next_values = np.append(values[1:], bootstrap_value)
    not_done = 1.0 - dones.astype(np.float64)
    deltas = rewards + gamma * next_values * not_done - values
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        running = deltas[t] + gamma * lam * not_done[t] * running
        adv[t] = running
    return adv, adv + values


@dataclass
class RolloutBatch:
    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    reward_advantages: np.ndarray
    cost_advantages: np.ndarray
    reward_returns: np.ndarray
    cost_returns: np.ndarray
    trajectories: list[Trajectory] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.states)


def make_value_net(state_dim: int, rng: np.random.Generator, hidden2: int = 32):
    return init_mlp((state_dim, 32, hidden2, 1), rng)


def build_batch(
    trajectories: Sequence[Trajectory],
    reward_critic,
    cost_critic,
    config: PpoConfig,
    normalize: bool = True,
) -> RolloutBatch:
    """Concatenate episodes and attach reward and novelty (cost) advantages.

    Only the reward advantages are normalised; novelty advantages stay in
    distance units.
    """
    states = np.concatenate([t.states for t in trajectories])
    actions = np.concatenate([t.actions for t in trajectories])
    logps = np.concatenate([t.log_probs for t in trajectories])
    dones = np.concatenate([t.dones for t in trajectories])
    rewards = np.concatenate([t.task_rewards for t in trajectories])
    novelty = np.concatenate([t.novelty_rewards for t in trajectories])
    v_r = forward(reward_critic, states)[:, 0]
    adv_r, ret_r = gae(rewards, v_r, 0.0, dones, config.gamma, config.lam)
    if cost_critic is not None:
        v_c = forward(cost_critic, states)[:, 0]
        adv_c, ret_c = gae(novelty, v_c, 0.0, dones, config.gamma, config.lam)
    else:
        adv_c = np.zeros_like(adv_r)
        ret_c = np.zeros_like(adv_r)
    if normalize:
        adv_r = (adv_r - adv_r.mean()) / (adv_r.std() + 1e-8)
    return RolloutBatch(states, actions, logps, adv_r, adv_c, ret_r, ret_c, list(trajectories))


def clipped_surrogate_weights(ratio: np.ndarray, adv: np.ndarray, clip_eps: float) -> np.ndarray:
    """Per-sample coefficient on grad log pi for the clipped surrogate.

    A sample whose ratio has left the trust region on the side its advantage
    pushes toward contributes nothing.
    """
    clipped = ((adv > 0) & (ratio > 1.0 + clip_eps)) | ((adv < 0) & (ratio < 1.0 - clip_eps))
    return np.where(clipped, 0.0, adv * ratio)


def surrogate_value(ratio: np.ndarray, adv: np.ndarray, clip_eps: float) -> float:
    clipped_ratio = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return float(np.mean(np.minimum(ratio * adv, clipped_ratio * adv)))


def surrogate_gradients(
    policy: GaussianPolicyParams,
    states,
    actions,
    old_log_probs,
    reward_adv,
    cost_adv,
    clip_eps: float,
    with_cost: bool = True,
):
    """Ascent gradients ``(g_r, g_c, ratio, loss_r)`` of both clipped surrogates."""
    n = len(states)
    logp, vjp = log_prob_and_vjp(policy, states, actions)
    ratio = np.exp(logp - old_log_probs)
    g_r = vjp(clipped_surrogate_weights(ratio, reward_adv, clip_eps) / n)
    if with_cost:
        g_c = vjp(clipped_surrogate_weights(ratio, cost_adv, clip_eps) / n)
    else:
        g_c = np.zeros_like(g_r)
    return g_r, g_c, ratio, surrogate_value(ratio, reward_adv, clip_eps)


class PpoLearner:
    """Owns the flat parameters and Adam state of a policy and its critics."""

    def __init__(
        self,
        policy: GaussianPolicyParams,
        config: PpoConfig,
        rng: np.random.Generator,
        with_cost: bool = False,
    ):
        self.config = config
        self.template = policy
        self.theta = flatten_policy(policy)
        self.with_cost = with_cost
        self.reward_critic = make_value_net(policy.state_dim, rng, config.hidden2)
        self.cost_critic = make_value_net(policy.state_dim, rng, config.hidden2)
        self.opt = AdamState.zeros(self.theta.size)
        self.vr = flatten_mlp(self.reward_critic)
        self.vc = flatten_mlp(self.cost_critic)
        self.opt_vr = AdamState.zeros(self.vr.size)
        self.opt_vc = AdamState.zeros(self.vc.size)
        a = policy.action_dim
        self._log_std_slice = slice(self.theta.size - a, self.theta.size)

    @property
    def policy(self) -> GaussianPolicyParams:
        return unflatten_policy(self.template, self.theta)

    def critics(self):
        dims = self.reward_critic.layer_dims
        return unflatten_mlp(dims, self.vr), unflatten_mlp(dims, self.vc)

    def make_batch(self, trajectories: Sequence[Trajectory]) -> RolloutBatch:
        vr, vc = self.critics()
        return build_batch(trajectories, vr, vc if self.with_cost else None, self.config)

    def update(
        self,
        batch: RolloutBatch,
        combiner: Combiner,
        gate_novelty: float,
        rng: np.random.Generator,
    ) -> dict:
        """Run the configured epochs of minibatch updates on ``batch``."""
        cfg = self.config
        n = len(batch)
        policy_losses, value_losses = [], []
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, cfg.minibatch_size):
                mb = perm[start : start + cfg.minibatch_size]
                policy = unflatten_policy(self.template, self.theta)
                g_r, g_c, _, loss_r = surrogate_gradients(
                    policy,
                    batch.states[mb],
                    batch.actions[mb],
                    batch.log_probs[mb],
                    batch.reward_advantages[mb],
                    batch.cost_advantages[mb],
                    cfg.clip_eps,
                    with_cost=self.with_cost,
                )
                if cfg.ent_coef:
                    # d(entropy)/d(log_std) is 1 per action dimension
                    g_r = g_r.copy()
                    g_r[self._log_std_slice] += cfg.ent_coef
                direction = combiner(g_r, g_c, gate_novelty)
                if not np.all(np.isfinite(direction)):
                    raise FloatingPointError(
                        f"non-finite update direction (|g_r|={np.linalg.norm(g_r)}, "
                        f"|g_c|={np.linalg.norm(g_c)})"
                    )
                theta, self.opt = adam_step(self.opt, self.theta, -direction, cfg.lr)
                ls = theta[self._log_std_slice]
                np.clip(ls, LOG_STD_MIN, LOG_STD_MAX, out=ls)
                self.theta = theta
                policy_losses.append(-loss_r)
                self.vr, self.opt_vr, vl = self._fit_value(
                    self.vr, self.opt_vr, batch.states[mb], batch.reward_returns[mb]
                )
                value_losses.append(vl)
                if self.with_cost:
                    self.vc, self.opt_vc, _ = self._fit_value(
                        self.vc, self.opt_vc, batch.states[mb], batch.cost_returns[mb]
                    )
        return {
            "policy_loss": float(np.mean(policy_losses)),
            "value_loss": float(np.mean(value_losses)),
        }

    def _fit_value(self, flat, opt, states, targets):
        net = unflatten_mlp(self.reward_critic.layer_dims, flat)
        pred = forward(net, states)[:, 0]
        err = pred - targets
        loss = self.config.vf_coef * float(np.mean(err**2))
        upstream = (2.0 * self.config.vf_coef / len(err)) * err[:, None]
        grad = mlp_flat_grad(net, states, upstream)
        flat, opt = adam_step(opt, flat, grad, self.config.lr)
        return flat, opt, loss


def ppo_update(
    policy: GaussianPolicyParams,
    value_nets,
    batch: RolloutBatch,
    config: PpoConfig,
    combiner: Combiner = pass_through,
    gate_novelty: float = math.inf,
    rng: np.random.Generator | None = None,
):
    """Functional wrapper: one PPO update from fresh optimizer state.

    Returns ``(policy, (reward_critic, cost_critic), g_r, g_c)`` where the
    gradients are full-batch surrogate gradients at the *incoming* policy
    (ratio 1). ``g_c`` points toward higher novelty.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    g_r, g_c, _, _ = surrogate_gradients(
        policy, batch.states, batch.actions, batch.log_probs,
        batch.reward_advantages, batch.cost_advantages, config.clip_eps,
    )
    learner = PpoLearner(policy, config, rng, with_cost=True)
    learner.reward_critic, learner.cost_critic = value_nets
    learner.vr = flatten_mlp(value_nets[0])
    learner.vc = flatten_mlp(value_nets[1])
    learner.update(batch, combiner, gate_novelty, rng)
    return learner.policy, learner.critics(), g_r, g_c


@dataclass
class TrainResult:
    policy: GaussianPolicyParams
    metrics: list[dict]
    checkpoints: list[float]
    episodes: int
    timesteps: int


METRIC_COLUMNS = (
    "update_index", "timesteps", "mean_return", "mean_episode_len", "mean_novelty",
    "n_novelty_terminations", "policy_loss", "value_loss",
)


def train(
    policy: GaussianPolicyParams,
    env,
    strategy,
    refs: ReferenceSet,
    total_timesteps: int | None,
    config: PpoConfig,
    rng: np.random.Generator,
    total_episodes: int | None = None,
    eval_rng: np.random.Generator | None = None,
    on_update: Callable[[PpoLearner, dict], None] | None = None,
    max_updates: int | None = None,
) -> TrainResult:
    """Collect/advantage/update until the timestep or episode budget is spent.

    ``strategy`` supplies ``hook`` (rollout termination) and ``combine``
    (gradient combination). When ``eval_rng`` is given, every update is
    followed by a ``config.eval_trials``-episode evaluation whose mean return is
    appended to ``checkpoints``. ``max_updates`` caps the number of updates.
    """
    learner = PpoLearner(policy, config, rng, with_cost=strategy.uses_cost)
    metrics: list[dict] = []
    checkpoints: list[float] = []
    timesteps = episodes = 0

    def budget_left() -> bool:
        if max_updates is not None and len(metrics) >= max_updates:
            return False
        if total_episodes is not None:
            return episodes < total_episodes
        return timesteps < (total_timesteps or 0)

    while budget_left():
        current = learner.policy
        steps = config.steps_per_update
        if total_episodes is None:
            steps = min(steps, total_timesteps - timesteps)
        trajs = collect_rollout(current, env, refs, strategy.hook, steps, rng, config.n_envs)
        batch = learner.make_batch(trajs)
        gate = policy_novelty(current, refs, trajs) if len(refs) else math.inf
        stats = learner.update(batch, strategy.combine, gate, rng)
        timesteps += len(batch)
        episodes += len(trajs)
        novelty = np.concatenate([t.novelty_rewards for t in trajs])
        row = {
            "update_index": len(metrics),
            "timesteps": timesteps,
            "episodes": episodes,
            "mean_return": float(np.mean([t.episode_return for t in trajs])),
            "mean_episode_len": float(np.mean([len(t) for t in trajs])),
            "mean_novelty": float(novelty.mean()) if len(refs) else math.inf,
            "n_novelty_terminations": sum(t.done_reason == NOVELTY_TERMINATION for t in trajs),
            "n_reward_region": sum(t.done_reason == REWARD_REGION for t in trajs),
            "n_step_limit": sum(t.done_reason == STEP_LIMIT for t in trajs),
            "gate_novelty": gate,
            **stats,
        }
        if eval_rng is not None:
            checkpoints.append(evaluate(learner.policy, env, config.eval_trials, eval_rng).mean_return)
        metrics.append(row)
        if on_update is not None:
            on_update(learner, row)
        log.debug("update %d: %s", row["update_index"], row)
    return TrainResult(learner.policy, metrics, checkpoints, episodes, timesteps)
