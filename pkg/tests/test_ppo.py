import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import constant_policy
from novelty_rl.envs import NOVELTY_TERMINATION, REWARD_REGION, STEP_LIMIT, FourRewardMaze
from novelty_rl.metric import ReferenceSet
from novelty_rl.nn import GaussianPolicyParams, flatten_policy, gaussian_log_prob, make_policy
from novelty_rl.ppo import (
    METRIC_COLUMNS,
    PpoConfig,
    PpoLearner,
    build_batch,
    clipped_surrogate_weights,
    collect_rollout,
    gae,
    make_value_net,
    pass_through,
    ppo_update,
    surrogate_gradients,
    train,
)
from novelty_rl.strategies import NoveltyConfig, ipd_hook, make_strategy

SMALL = PpoConfig(steps_per_update=256, epochs=2, n_envs=8, eval_trials=5)


def brute_force_gae(r, v, boot, d, gamma, lam):
    n = len(r)
    adv = np.zeros(n)
    for t in range(n):
        total, coef = 0.0, 1.0
        for k in range(t, n):
            nv = v[k + 1] if k + 1 < n else boot
            delta = r[k] + gamma * nv * (1 - d[k]) - v[k]
            total += coef * delta
            if d[k]:
                break
            coef *= gamma * lam
        adv[t] = total
    return adv


def test_gae_examples():
    adv, ret = gae([1.0, 1.0], [0.0, 0.0], 0.0, [False, True], 1.0 - 1e-12, 1.0)
    np.testing.assert_allclose(adv, [2.0, 1.0], atol=1e-10)
    adv, ret = gae([3.0], [1.25], 7.0, [True], 0.99, 0.95)
    assert adv[0] == 3.0 - 1.25 and ret[0] == 3.0
    r, v = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.1, -0.4])
    adv, _ = gae(r, v, 0.7, [False, False, False], 0.9, 0.0)
    deltas = r + 0.9 * np.append(v[1:], 0.7) - v
    np.testing.assert_array_equal(adv, deltas)
    with pytest.raises(ValueError):
        gae([1.0], [1.0, 2.0], 0.0, [True], 0.9, 0.9)


@settings(max_examples=60)
@given(
    st.integers(1, 6).flatmap(lambda n: st.tuples(
        st.lists(st.floats(-10, 10), min_size=n, max_size=n),
        st.lists(st.floats(-10, 10), min_size=n, max_size=n),
        st.lists(st.booleans(), min_size=n, max_size=n),
    )),
    st.floats(-10, 10), st.floats(0, 0.999), st.floats(0, 1),
)
def test_gae_matches_brute_force(seq, boot, gamma, lam):
    r, v, d = (np.array(x) for x in seq)
    adv, ret = gae(r, v, boot, d, gamma, lam)
    np.testing.assert_allclose(adv, brute_force_gae(r, v, boot, d, gamma, lam), atol=1e-10, rtol=0)
    np.testing.assert_allclose(ret, adv + v, atol=1e-12)


def test_clip_branch():
    ratio = np.array([1.5, 1.5, 0.5, 0.5, 1.0])
    adv = np.array([1.0, -1.0, -1.0, 1.0, 2.0])
    w = clipped_surrogate_weights(ratio, adv, 0.2)
    np.testing.assert_array_equal(w, [0.0, -1.5, 0.0, 0.5, 2.0])


def _batch(rng, n=40):
    pol = make_policy(2, 2, rng)
    pol = GaussianPolicyParams(pol.mlp, np.array([-0.5, 0.1]))
    states = rng.uniform(0, 16, size=(n, 2))
    actions = pol.mean(states) + rng.normal(size=(n, 2)) * np.exp(pol.log_std)
    return pol, states, actions, gaussian_log_prob(pol.mean(states), pol.log_std, actions)


def test_ratio_one_gives_vanilla_policy_gradient(rng):
    pol, s, a, lp = _batch(rng)
    adv = rng.normal(size=len(s))
    g_r, g_c, ratio, _ = surrogate_gradients(pol, s, a, lp, adv, np.zeros(len(s)), 0.2)
    np.testing.assert_allclose(ratio, 1.0)
    # vanilla estimator: mean of adv * grad log pi, by central differences
    theta = flatten_policy(pol)
    from novelty_rl.nn import unflatten_policy

    def f(th):
        p = unflatten_policy(pol, th)
        return float(np.mean(adv * gaussian_log_prob(p.mean(s), p.log_std, a)))

    for i in rng.choice(theta.size, 25, replace=False):
        e = np.zeros_like(theta)
        e[i] = 1e-6
        num = (f(theta + e) - f(theta - e)) / 2e-6
        assert abs(num - g_r[i]) <= 1e-5 * max(1, abs(num))
    assert np.all(g_c == 0)


def test_zero_advantages_give_zero_gradient(rng):
    pol, s, a, lp = _batch(rng)
    g_r, _, _, _ = surrogate_gradients(pol, s, a, lp, np.zeros(len(s)), np.zeros(len(s)), 0.2)
    assert np.all(g_r == 0)


def test_clipped_sample_contributes_nothing(rng):
    pol, s, a, lp = _batch(rng, n=2)
    adv = np.array([1.0, 0.0])
    old = lp.copy()
    old[0] -= 1.0  # ratio e > 1 + eps on a positive advantage
    g_r, _, ratio, _ = surrogate_gradients(pol, s, a, old, adv, np.zeros(2), 0.2)
    assert ratio[0] > 1.2
    assert np.all(g_r == 0)


def test_collect_rollout_plain(rng):
    env = FourRewardMaze()
    pol = make_policy(2, 2, rng)
    trajs = collect_rollout(pol, env, ReferenceSet(), None, 300, np.random.default_rng(0), n_envs=4)
    assert sum(len(t) for t in trajs) >= 300
    for t in trajs:
        n = len(t)
        assert t.states.shape == (n, 2) and t.actions.shape == (n, 2) and t.log_probs.shape == (n,)
        assert t.dones[-1] and not t.dones[:-1].any()
        assert t.done_reason in (REWARD_REGION, STEP_LIMIT)
        assert np.all(t.novelty_rewards == 0) and np.all(np.isfinite(t.log_probs))
        np.testing.assert_allclose(
            t.log_probs, gaussian_log_prob(t.action_means, pol.log_std, t.actions), atol=1e-10)
    again = collect_rollout(pol, env, ReferenceSet(), None, 300, np.random.default_rng(0), n_envs=4)
    assert all(np.array_equal(x.actions, y.actions) for x, y in zip(trajs, again))


def test_collect_rollout_exact_episode_count(rng):
    pol = make_policy(2, 2, rng)
    trajs = collect_rollout(pol, FourRewardMaze(), ReferenceSet(), None, 1, rng, n_envs=7)
    assert len(trajs) == 7


def test_hook_always_true_after_grace_period():
    # near-stationary policy from the centre: no disk can be reached in 21 steps
    pol = constant_policy([0.0, 0.0], log_std=-20.0)
    env = FourRewardMaze(start=(8.0, 8.0))
    refs = ReferenceSet((constant_policy([0.0, 0.0]),))
    hook = make_strategy(NoveltyConfig("ipd", r0=math.inf, ts=20)).hook
    trajs = collect_rollout(pol, env, refs, hook, 500, np.random.default_rng(0), n_envs=4)
    assert all(len(t) == 21 and t.done_reason == NOVELTY_TERMINATION for t in trajs)
    assert trajs[0].task_rewards[-1] == -0.01


def test_novelty_rewards_recorded(rng):
    pol = constant_policy([0.0, 0.0], log_std=-1.0)
    refs = ReferenceSet((constant_policy([0.3, 0.4]), constant_policy([1.0, 0.0])))
    trajs = collect_rollout(pol, FourRewardMaze(), refs, None, 50, rng, n_envs=2)
    for t in trajs:
        np.testing.assert_allclose(t.novelty_rewards, 0.5, atol=1e-12)
        np.testing.assert_allclose(t.running_novelty, 0.5, atol=1e-12)


def test_build_batch_normalization(rng):
    pol = make_policy(2, 2, rng)
    trajs = collect_rollout(pol, FourRewardMaze(), ReferenceSet(), None, 200, rng, n_envs=4)
    batch = build_batch(trajs, make_value_net(2, rng), make_value_net(2, rng), SMALL)
    assert abs(batch.reward_advantages.mean()) < 1e-10
    assert abs(batch.reward_advantages.std() - 1.0) < 1e-6
    assert len(batch) == sum(len(t) for t in trajs)


def test_ppo_update_functional(rng):
    pol = make_policy(2, 2, rng)
    trajs = collect_rollout(pol, FourRewardMaze(), ReferenceSet((constant_policy([0.0, 0.0]),)),
                            None, 128, rng, n_envs=4)
    nets = (make_value_net(2, rng), make_value_net(2, rng))
    batch = build_batch(trajs, *nets, SMALL)
    new_pol, new_nets, g_r, g_c = ppo_update(pol, nets, batch, SMALL, pass_through, math.inf, rng)
    assert g_r.shape == g_c.shape == flatten_policy(pol).shape
    assert not np.array_equal(flatten_policy(new_pol), flatten_policy(pol))
    assert new_nets[0].layer_dims == nets[0].layer_dims


def test_train_zero_budget_and_bookkeeping(rng):
    env = FourRewardMaze()
    pol = make_policy(2, 2, rng)
    strat = make_strategy(NoveltyConfig("ppo"))
    res = train(pol, env, strat, ReferenceSet(), 0, SMALL, rng)
    assert res.policy is pol or np.array_equal(flatten_policy(res.policy), flatten_policy(pol))
    assert res.metrics == []
    res = train(pol, env, strat, ReferenceSet(), 600, SMALL, rng, eval_rng=np.random.default_rng(1))
    # whole episodes per batch, so a batch can overshoot steps_per_update
    n = len(res.metrics)
    assert n >= 1 and len(res.checkpoints) == n
    assert [m["update_index"] for m in res.metrics] == list(range(n))
    assert all(m["timesteps"] >= 256 * (k + 1) for k, m in enumerate(res.metrics))
    assert set(METRIC_COLUMNS) <= set(res.metrics[0])
    assert res.timesteps == res.metrics[-1]["timesteps"] >= 600


def test_entropy_bonus_raises_log_std(rng):
    pol = make_policy(2, 2, rng)
    cfg = PpoConfig(steps_per_update=128, epochs=1, n_envs=4, ent_coef=1.0)
    res = train(pol, FourRewardMaze(), make_strategy(NoveltyConfig("ppo")), ReferenceSet(), 128, cfg, rng)
    assert np.all(res.policy.log_std > 0)


def test_ppo_ignores_references():
    env = FourRewardMaze()
    strat = make_strategy(NoveltyConfig("ppo"))
    refs = ReferenceSet((constant_policy([0.2, 0.0]),))
    out = []
    for r in (ReferenceSet(), refs):
        rng = np.random.default_rng(3)
        pol = make_policy(2, 2, rng)
        out.append(train(pol, env, strat, r, 512, SMALL, rng))
    assert np.array_equal(flatten_policy(out[0].policy), flatten_policy(out[1].policy))
    assert [m["mean_return"] for m in out[0].metrics] == [m["mean_return"] for m in out[1].metrics]


def test_learner_clamps_log_std(rng):
    pol = make_policy(2, 2, rng)
    pol = GaussianPolicyParams(pol.mlp, np.array([2.0, 2.0]))
    learner = PpoLearner(pol, PpoConfig(steps_per_update=64, epochs=1, lr=1.0, ent_coef=10.0), rng)
    trajs = collect_rollout(pol, FourRewardMaze(), ReferenceSet(), None, 64, rng, n_envs=4)
    learner.update(learner.make_batch(trajs), pass_through, math.inf, rng)
    assert np.all(learner.policy.log_std <= 2.0)
