import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banditforge.agents import gae, make_task, sample_task, train
from banditforge.agents.common import Adam, ReplayBuffer, polyak
from banditforge.agents.dqn import epsilon, td_target
from banditforge.agents.hparams import GRIDS, InnerTask, grid_values
from banditforge.agents.neuro import neuroevolve_policy
from banditforge.agents.ppo import clipped_surrogate
from banditforge.core import autodiff as ad
from banditforge.core.nets import ContractError, NetworkSpec, NonFiniteError, forward
from banditforge.core.rng import Rng
from banditforge.envs import classic
from banditforge.envs.spaces import Box, Discrete
from banditforge.envs.synthetic import ScbSpec, SyntheticEnv, init_genome


class ConstantBandit:
    """One-step environment with a fixed reward for every action."""

    horizon = 1

    def __init__(self, action_space, reward_fn, obs_dim=2):
        self.action_space, self.reward_fn, self.obs_dim = action_space, reward_fn, obs_dim

    def reset_state(self, gen, n):
        return gen.uniform(-1, 1, (n, self.obs_dim)).astype(np.float32)

    def observe(self, s):
        return s

    def step_state(self, s, a):
        return s, self.reward_fn(s, a), np.ones(len(s), bool)


# --- hyperparameters -----------------------------------------------------------

def test_fixed_ppo_values():
    hp = make_task("CartPole-v1", "ppo").hp
    assert (hp["lr"], hp["gamma"], hp["gae_lambda"], hp["clip_eps"], hp["ent_coef"], hp["vf_coef"]) == \
        (0.005, 0.99, 0.95, 0.2, 0.01, 0.5)


def test_fixed_sac_values():
    hp = make_task("CartPole-v1", "sac").hp
    assert (hp["lr"], hp["gamma"], hp["tau"], hp["target_entropy_ratio"]) == (0.005, 0.99, 0.95, 0.7)


def test_sampled_discount_frequencies():
    counts = Counter(make_task("CartPole-v1", "ppo", Rng(0).fold(i), fixed=False).hp["gamma"]
                     for i in range(10_000))
    assert set(counts) == {1.0, 0.99, 0.95, 0.9, 0.8}
    for c in counts.values():
        assert abs(c / 10_000 - 0.2) <= 0.03


def test_continuous_ppo_never_samples_largest_lr():
    lrs = {make_task("Pendulum-v1", "ppo", Rng(1).fold(i), fixed=False).hp["lr"] for i in range(500)}
    assert 0.01 not in lrs and len(lrs) == 4


def test_task_sampling_respects_action_space():
    for i in range(50):
        assert sample_task("CartPole-v1", Rng(i)).algo in ("ppo", "sac", "dqn")
        assert sample_task("Pendulum-v1", Rng(i)).algo in ("ppo", "sac", "ddpg", "td3")
    with pytest.raises(ContractError):
        make_task("CartPole-v1", "ddpg")
    with pytest.raises(ContractError):
        make_task("CartPole-v1", "ppo", nope=1)


def test_task_round_trip_and_networks():
    t = make_task("Pendulum-v1", "sac", total_steps=123)
    assert InnerTask.from_dict(t.to_dict()) == t
    assert t.activation == "relu" and t.hidden == (64, 64)
    assert make_task("Acrobot-v1", "dqn").activation == "tanh"
    assert grid_values("dqn", "eps_end") == (0.01, 0.05, 0.1, 0.2)
    assert GRIDS["td3"]["policy_delay"] == 2


# --- building blocks --------------------------------------------------------------

def gae_brute_force(r, v, d, gamma, lam):
    T = len(r)
    adv = np.zeros(T)
    for t in range(T):
        total, coef = 0.0, 1.0
        for k in range(t, T):
            nonterminal = 0.0 if d[k] else 1.0
            delta = r[k] + gamma * v[k + 1] * nonterminal - v[k]
            total += coef * delta
            if d[k]:
                break
            coef *= gamma * lam
        adv[t] = total
    return adv


def test_gae_lambda_zero_is_td_error():
    r, v = np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.1, -0.2, 0.7])
    d = np.zeros(3, bool)
    np.testing.assert_allclose(gae(r, v, d, 0.9, 0.0), r + 0.9 * v[1:] - v[:-1])


def test_gae_monte_carlo_limit():
    r = np.array([1.0, -2.0, 0.5, 4.0])
    np.testing.assert_allclose(gae(r, np.zeros(5), np.zeros(4, bool), 1.0, 1.0), np.cumsum(r[::-1])[::-1])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.5, 1.0), st.floats(0.0, 1.0))
def test_gae_matches_brute_force(seed, gamma, lam):
    g = np.random.default_rng(seed)
    r, v = g.normal(size=5), g.normal(size=6)
    d = g.random(5) < 0.3
    np.testing.assert_allclose(gae(r, v, d, gamma, lam), gae_brute_force(r, v, d, gamma, lam), atol=1e-12)


def test_gae_truncation_bootstraps_from_final_observation():
    r, v = np.array([1.0, 1.0]), np.array([0.0, 0.0, 5.0])
    d = np.array([True, False])
    out = gae(r, v, d, 0.5, 1.0, terminated=np.array([False, False]), next_values=np.array([2.0, 0.0]))
    assert out[0] == pytest.approx(1.0 + 0.5 * 2.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(-5, 5), st.sampled_from([0.1, 0.2, 0.3]))
def test_clipped_surrogate(ratio, adv, eps):
    out = clipped_surrogate(ad.const(np.array([ratio])), np.array([adv]), eps).value[0]
    if 1 - eps <= ratio <= 1 + eps:
        assert out == pytest.approx(ratio * adv)
    else:
        clipped = min(max(ratio, 1 - eps), 1 + eps)
        assert out == pytest.approx(min(ratio * adv, clipped * adv))


def test_double_dqn_target_selection():
    q_target = np.array([[1.0, 3.0]])
    q_online = np.array([[5.0, 0.0]])
    rew, term = np.array([0.0]), np.array([0.0])
    assert td_target(rew, term, 1.0, q_target) == pytest.approx([3.0])
    assert td_target(rew, term, 1.0, q_target, q_online) == pytest.approx([1.0])
    assert td_target(rew, np.array([1.0]), 1.0, q_target) == pytest.approx([0.0])


def test_epsilon_schedule():
    assert epsilon(0, 1000, 1.0, 0.05, 0.5) == 1.0
    assert epsilon(250, 1000, 1.0, 0.05, 0.5) == pytest.approx(0.525)
    assert epsilon(500, 1000, 1.0, 0.05, 0.5) == pytest.approx(0.05)
    assert epsilon(900, 1000, 1.0, 0.05, 0.5) == pytest.approx(0.05)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_polyak(tau, seed):
    g = np.random.default_rng(seed)
    target, online = g.normal(size=6), g.normal(size=6)
    expected = tau * target + (1 - tau) * online
    polyak(target, online, tau)
    np.testing.assert_allclose(target, expected)
    polyak(target, online, 0.0)
    assert np.array_equal(target, online)


def test_adam_clips_and_rejects_nan():
    p = np.zeros(2)
    opt = Adam([p], lr=0.1, max_grad_norm=1.0)
    assert opt.step([np.array([30.0, 40.0])]) == pytest.approx(50.0)
    # the first moment sees the clipped gradient (unit norm); the first step itself is lr per coordinate
    np.testing.assert_allclose(opt.m[0], [0.1 * 0.6, 0.1 * 0.8], rtol=1e-5)
    np.testing.assert_allclose(p, [-0.1, -0.1], rtol=1e-5)
    with pytest.raises(NonFiniteError):
        opt.step([np.array([np.nan, 0.0])])


def test_replay_buffer_wraps():
    buf = ReplayBuffer(3, 1, (), np.int64)
    for i in range(5):
        buf.add(np.array([[i]]), np.array([i]), np.array([i]), np.array([[i]]), np.array([0]))
    assert buf.size == 3 and sorted(buf.act.tolist()) == [2, 3, 4]


# --- training ---------------------------------------------------------------------

def test_dqn_learns_constant_bandit_value():
    env = ConstantBandit(Discrete(1), lambda s, a: np.full(len(s), 0.7))
    task = make_task("CartPole-v1", "dqn", total_steps=3000, lr=0.001)
    pol, _ = train(task, env, Rng(0))
    q = forward(pol.net, pol.params, env.reset_state(Rng(1).generator(), 100))
    assert np.all(np.abs(q - 0.7) < 0.05)


@pytest.mark.parametrize("algo,steps", [("ppo", 1234), ("sac", 1203), ("dqn", 1207)])
def test_step_accounting_discrete(algo, steps):
    env = SyntheticEnv(ScbSpec("CartPole-v1", "CB", "gaussian"), init_genome(ScbSpec("CartPole-v1", "CB", "gaussian"), Rng(0)))
    _, log = train(make_task("CartPole-v1", algo, total_steps=steps), env, Rng(1))
    assert log.steps <= steps
    if log.steps < steps:
        assert f"{steps - log.steps} steps unused" in log.note
    else:
        assert log.note == ""


@pytest.mark.parametrize("algo", ["ppo", "sac", "ddpg", "td3"])
def test_continuous_agents_run_and_respect_box(algo, pendulum_cb):
    env = SyntheticEnv(*pendulum_cb)
    pol, log = train(make_task("Pendulum-v1", algo, total_steps=1500), env, Rng(2))
    a = pol(np.random.default_rng(0).standard_normal((64, 3)).astype(np.float32))
    if algo == "ppo":
        assert a.shape == (64, 1)  # raw mean, clipped by the environment
    else:
        assert np.all(np.abs(a) <= 2.0 + 1e-6)
    assert log.steps == 1500


def test_training_is_deterministic(pendulum_cb):
    env = SyntheticEnv(*pendulum_cb)
    task = make_task("Pendulum-v1", "td3", total_steps=1200)
    p1, _ = train(task, env, Rng(3))
    p2, _ = train(task, env, Rng(3))
    assert np.array_equal(p1.params, p2.params)


def test_algorithm_space_mismatch():
    env = classic.make("CartPole-v1")
    task = make_task("Pendulum-v1", "ddpg")
    with pytest.raises(ContractError):
        train(task, env, Rng(0))


def test_sac_learns_bandit_best_arm():
    env = ConstantBandit(Discrete(3), lambda s, a: (a == 2).astype(np.float64))
    pol, _ = train(make_task("CartPole-v1", "sac", total_steps=2500), env, Rng(0))
    assert np.all(pol(env.reset_state(Rng(1).generator(), 50)) == 2)


def test_ppo_learns_continuous_bandit_target():
    env = ConstantBandit(Box((-2.0,), (2.0,)), lambda s, a: -np.abs(a[:, 0] - 0.3))
    pol, _ = train(make_task("Pendulum-v1", "ppo", total_steps=5000), env, Rng(0))
    a = pol(env.reset_state(Rng(1).generator(), 50))
    assert np.all(np.abs(a - 0.3) < 0.2)


def test_neuroevolution_finds_bandit_optimum():
    env = ConstantBandit(Box((-1.0,), (1.0,)), lambda s, a: -np.abs(a[:, 0] - 0.3))
    pol = neuroevolve_policy(env, NetworkSpec(2, (8,), 1), 60, 16, Rng(0), episodes=16)
    a = pol(env.reset_state(Rng(5).generator(), 200))
    assert np.max(np.abs(a - 0.3)) < 0.05


def test_neuroevolution_constant_reward_keeps_sigma():
    from banditforge.agents.neuro import evolve_policy_params

    env = ConstantBandit(Discrete(2), lambda s, a: np.ones(len(s)))
    _, state, history = evolve_policy_params(env, NetworkSpec(2, (), 2), 5, 8, Rng(0), sigma0=0.1)
    assert {h.best for h in history} == {1.0}
    # equal fitness shares one utility, which is zero, so the search distribution is unchanged
    assert np.allclose(state.sigma, 0.1)
