import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banditforge.core.nets import ContractError
from banditforge.core.rng import Rng
from banditforge.envs import classic
from banditforge.envs.classic import EnvId
from banditforge.envs.vec import VecEnv, evaluate


def resets(env_id, n=10_000):
    env = classic.make(env_id)
    return env.reset_state(Rng(0).generator(), n)


def test_cartpole_reset_range():
    s = resets("CartPole-v1")
    assert s.shape == (10_000, 4)
    assert np.all(np.abs(s) <= 0.05)


def test_mountaincar_reset_range():
    s = resets("MountainCar-v0")
    assert np.all((s[:, 0] >= -0.6) & (s[:, 0] <= -0.4))
    assert np.all(s[:, 1] == 0)


def test_pendulum_reset_range():
    s = resets("Pendulum-v1")
    assert np.all(np.abs(s[:, 0]) <= math.pi) and np.all(np.abs(s[:, 1]) <= 1)
    obs = classic.make("Pendulum-v1").observe(s[:3])
    np.testing.assert_allclose(obs[:, 0], np.cos(s[:3, 0]), rtol=1e-6)


def cartpole_euler(state, action):
    """Independent Euler step with the standard constants."""
    g, mc, mp, half, force, tau = 9.8, 1.0, 0.1, 0.5, 10.0, 0.02
    x, xd, th, thd = state
    f = force if action == 1 else -force
    total = mc + mp
    temp = (f + mp * half * thd**2 * math.sin(th)) / total
    thacc = (g * math.sin(th) - math.cos(th) * temp) / (half * (4 / 3 - mp * math.cos(th) ** 2 / total))
    xacc = temp - mp * half * thacc * math.cos(th) / total
    return np.array([x + tau * xd, xd + tau * xacc, th + tau * thd, thd + tau * thacc])


def test_cartpole_push_right_from_rest():
    env = classic.make("CartPole-v1")
    nxt, r, term = env.step_state(np.zeros((1, 4)), np.array([1]))
    np.testing.assert_allclose(nxt[0], [0.0, 0.19512, 0.0, -0.29268], atol=5e-6)
    assert r[0] == 1.0 and not term[0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-0.2, 0.2), min_size=4, max_size=4), st.integers(0, 1))
def test_cartpole_matches_euler_reference(state, action):
    env = classic.make("CartPole-v1")
    nxt, _, _ = env.step_state(np.array([state]), np.array([action]))
    np.testing.assert_allclose(nxt[0], cartpole_euler(state, action), rtol=1e-12, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.integers(0, 1))
def test_cartpole_termination_rule(state, action):
    env = classic.make("CartPole-v1")
    nxt, _, term = env.step_state(np.array([state]), np.array([action]))
    x, th = nxt[0, 0], nxt[0, 2]
    assert term[0] == (abs(x) > 2.4 or abs(th) > 0.2095)


def test_mountaincar_reward_is_step_penalty():
    env = classic.make("MountainCar-v0")
    s = resets("MountainCar-v0", 50)
    _, r, _ = env.step_state(s, np.arange(50) % 3)
    assert np.all(r == -1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1.2, 0.6), st.floats(-0.07, 0.07), st.integers(0, 2))
def test_mountaincar_bounds(pos, vel, action):
    env = classic.make("MountainCar-v0")
    nxt, _, _ = env.step_state(np.array([[pos, vel]]), np.array([action]))
    assert -1.2 <= nxt[0, 0] <= 0.6 and -0.07 <= nxt[0, 1] <= 0.07


@settings(max_examples=100, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-8, 8), st.floats(-5, 5))
def test_pendulum_bounds(th, om, u):
    env = classic.make("Pendulum-v1")
    nxt, r, _ = env.step_state(np.array([[th, om]]), np.array([[u]]))
    assert -8 <= nxt[0, 1] <= 8
    # torque is clipped to [-2, 2] before it enters the cost
    uc = min(max(u, -2.0), 2.0)
    norm = ((th + math.pi) % (2 * math.pi)) - math.pi
    assert r[0] == pytest.approx(-(norm**2 + 0.1 * om**2 + 0.001 * uc**2), rel=1e-9, abs=1e-12)


def test_pendulum_zero_cost_at_top():
    env = classic.make("Pendulum-v1")
    _, r, _ = env.step_state(np.zeros((1, 2)), np.zeros((1, 1)))
    assert r[0] == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-math.pi, math.pi), min_size=2, max_size=2),
       st.lists(st.floats(-4, 4), min_size=2, max_size=2), st.integers(0, 2))
def test_acrobot_termination_rule(angles, vels, action):
    env = classic.make("Acrobot-v1")
    nxt, r, term = env.step_state(np.array([angles + vels]), np.array([action]))
    t1, t2 = nxt[0, 0], nxt[0, 1]
    assert term[0] == (-math.cos(t1) - math.cos(t1 + t2) > 1.0)
    assert r[0] == (0.0 if term[0] else -1.0)
    assert abs(nxt[0, 2]) <= 4 * math.pi and abs(nxt[0, 3]) <= 9 * math.pi


def test_physics_is_deterministic():
    for env_id in EnvId:
        env = classic.make(env_id)
        s = env.reset_state(Rng(1).generator(), 8)
        a = env.action_space.sample(Rng(2).generator(), 8)
        a1 = env.step_state(s.copy(), a)
        a2 = env.step_state(s.copy(), a)
        for u, v in zip(a1, a2):
            assert np.array_equal(u, v)


def test_observation_dims_and_horizons():
    dims = {"CartPole-v1": (4, 500), "MountainCar-v0": (2, 200), "MountainCarContinuous-v0": (2, 999),
            "Pendulum-v1": (3, 200), "Acrobot-v1": (6, 500)}
    for name, (d, h) in dims.items():
        env = classic.make(name)
        assert env.obs_dim == d and env.horizon == h
        assert env.observe(env.reset_state(Rng(0).generator(), 2)).shape == (2, d)


def test_alias_parses():
    assert EnvId.parse("ContinuousMountainCar-v0") is EnvId.ContinuousMountainCarV0
    with pytest.raises(ContractError):
        EnvId.parse("LunarLander-v2")


def test_rollout_returns():
    assert classic.rollout("MountainCar-v0", lambda o: 1, 200, Rng(0)) == -200.0
    assert classic.rollout("CartPole-v1", lambda o: 0, 500, Rng(0)) < 50


def cartpole_balancer(obs):
    return int(obs[2] + 0.5 * obs[3] > 0)


def mountaincar_energy(obs):
    return 2 if obs[1] >= 0 else 0


def test_solved_policies():
    assert classic.rollout("CartPole-v1", cartpole_balancer, 500, Rng(0)) == 500.0
    assert classic.rollout("MountainCar-v0", mountaincar_energy, 200, Rng(0)) > -200.0


def test_step_contract():
    st0 = classic.reset("CartPole-v1", Rng(0))
    with pytest.raises(ContractError):
        classic.step("CartPole-v1", st0, 2)
    with pytest.raises(ContractError):
        classic.step("Pendulum-v1", classic.reset("Pendulum-v1", Rng(0)), 3.0)
    s = classic.reset("MountainCar-v0", Rng(0), horizon=1)
    s, _ = classic.step("MountainCar-v0", s, 1)
    assert s.truncated and not s.done
    with pytest.raises(ContractError):
        classic.step("MountainCar-v0", s, 1)


def test_vecenv_truncation_and_reset():
    venv = VecEnv(classic.make("MountainCar-v0"), 3, Rng(0), horizon=5)
    venv.reset()
    for t in range(5):
        obs, r, term, trunc, final = venv.step(np.ones(3, int))
    assert trunc.all() and not term.any()
    assert venv.episode_returns == [-5.0, -5.0, -5.0]
    assert np.all(obs[:, 1] == 0)  # fresh episodes


def test_vecenv_clips_continuous_actions():
    venv = VecEnv(classic.make("Pendulum-v1"), 2, Rng(0))
    venv.reset()
    _, r, *_ = venv.step(np.array([[100.0], [-100.0]]))
    assert np.all(np.isfinite(r))


def test_evaluate_matches_rollout():
    env = classic.make("CartPole-v1")
    pol = lambda o: (o[:, 2] + 0.5 * o[:, 3] > 0).astype(int)  # noqa: E731
    assert np.all(evaluate(env, pol, 4, None, Rng(3)) == 500.0)
    assert np.all(evaluate(env, pol, 4, 37, Rng(3)) == 37.0)
