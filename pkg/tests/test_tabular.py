import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banditforge.core.nets import ContractError
from banditforge.envs.tabular import (
    TabularMdp,
    bellman,
    greedy,
    occupancy,
    policy_evaluation,
    policy_iteration,
    reachable,
    value_iteration,
)
from banditforge.oracle import random_mdp


def self_loop():
    return TabularMdp(np.ones((1, 2, 1)), np.array([[0.0, 1.0]]), 0.9)


def test_self_loop_q_values():
    q, v = value_iteration(self_loop(), tol=1e-12)
    # geometric series: r / (1 - gamma) for staying with action 1 forever, plus the one-off 0 for action 0
    np.testing.assert_allclose(q, [[0.9 * 10.0, 10.0]], atol=1e-10)
    assert v[0] == pytest.approx(10.0)


def test_zero_reward_gives_zero_q():
    p = np.full((3, 2, 3), 1 / 3)
    q, v = value_iteration(TabularMdp(p, np.zeros((3, 2)), 0.95))
    assert np.all(q == 0) and np.all(v == 0)


def brute_force_optimum(mdp):
    """Best deterministic policy by enumeration (tiny MDPs only)."""
    best = None
    for pi in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        v = policy_evaluation(mdp, np.array(pi))
        best = v if best is None else np.maximum(best, v)
    return best


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3), st.sampled_from([0.5, 0.9, 0.99]))
def test_policy_iteration_matches_enumeration(seed, ns, na, gamma):
    mdp = random_mdp(seed, ns, na, gamma)
    _, v = policy_iteration(mdp)
    np.testing.assert_allclose(v, brute_force_optimum(mdp), atol=1e-9)


def test_random_mdp_greedy_value():
    mdp = random_mdp(3, 10, 4, 0.95)
    q, v = value_iteration(mdp, tol=1e-12)
    np.testing.assert_allclose(policy_evaluation(mdp, greedy(q)), v, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.8, 0.9, 0.99]))
def test_bellman_contraction(seed, gamma):
    mdp = random_mdp(seed, 6, 3, gamma)
    q_star, _ = policy_iteration(mdp)
    q = np.random.default_rng(seed).normal(size=q_star.shape) * 10
    for _ in range(20):
        before = np.max(np.abs(q - q_star))
        q = bellman(mdp, q)
        assert np.max(np.abs(q - q_star)) <= gamma * before + 1e-9


def test_occupancy_and_reachability():
    # chain 0 -> 1 -> 2 (absorbing) under action 0; state 3 unreachable
    p = np.zeros((4, 1, 4))
    p[0, 0, 1] = p[1, 0, 2] = p[2, 0, 2] = p[3, 0, 3] = 1
    init = np.array([1.0, 0, 0, 0])
    mdp = TabularMdp(p, np.zeros((4, 1)), 0.5, init)
    d = occupancy(mdp, np.zeros(4, int))
    # discounted visits: 1, 0.5, 0.25 + 0.125 + ... = 0.5 ; total 2
    np.testing.assert_allclose(d, [0.5, 0.25, 0.25, 0.0])
    assert list(reachable(mdp, np.zeros(4, int))) == [True, True, True, False]


def test_validation():
    with pytest.raises(ContractError):
        TabularMdp(np.full((2, 1, 2), 0.7), np.zeros((2, 1)), 0.9)
    with pytest.raises(ContractError):
        TabularMdp(np.full((2, 1, 2), 0.5), np.zeros((2, 1)), 1.0)
    with pytest.raises(ContractError):
        TabularMdp(np.full((2, 1, 2), 0.5), np.zeros((2, 2)), 0.9)
