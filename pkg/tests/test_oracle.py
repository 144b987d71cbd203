import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banditforge.core.nets import ContractError
from banditforge.envs.tabular import TabularMdp, policy_evaluation, value_iteration
from banditforge.oracle import VARIANTS, check_cb, construct_cb, exactness_sweep, random_mdp


def self_loop():
    p = np.zeros((1, 2, 1))
    p[0, :, 0] = 1.0
    return TabularMdp(p, np.array([[0.0, 1.0]]), 0.9)


def two_state_chain():
    # action 1 in state 0 moves to absorbing state 1 (reward 1 per step); action 0 stays put
    p = np.zeros((2, 2, 2))
    p[0, 0, 0] = 1
    p[0, 1, 1] = 1
    p[1, :, 1] = 1
    r = np.array([[0.1, 0.0], [1.0, 1.0]])
    return TabularMdp(p, r, 0.9, np.array([1.0, 0.0]))


def test_self_loop_constructions():
    mdp = self_loop()
    assert np.allclose(construct_cb(mdp, "q_star").reward, [[9.0, 10.0]])
    assert np.allclose(construct_cb(mdp, "indicator").reward, [[0.0, 1.0]])
    assert np.allclose(construct_cb(mdp, "neg_distance").reward, [[-1.0, 0.0]])
    for v in VARIANTS:
        cb = construct_cb(mdp, v)
        assert cb.greedy_policy().tolist() == [1]
        assert check_cb(cb) < 1e-10


def test_chain_q_values_and_initial_distribution():
    # Q*(0,1) = 0 + 0.9 * 10 = 9;  Q*(0,0) = 0.1 + 0.9 * 9 = 8.2
    cb = construct_cb(two_state_chain(), "q_star")
    assert np.allclose(cb.reward[0], [8.2, 9.0])
    assert np.allclose(cb.reward[1], [10.0, 10.0])
    # occupancy of the optimal policy from s0: (1 - 0.9) mass in s0, the rest in s1
    assert np.allclose(cb.initial, [0.1, 0.9])
    ind = construct_cb(two_state_chain(), "indicator")
    assert np.allclose(ind.initial, [0.5, 0.5])


@settings(deadline=None, max_examples=25)
@given(st.integers(0, 10**6), st.integers(1, 8), st.integers(1, 4), st.sampled_from([0.5, 0.9, 0.99]))
def test_q_star_reward_is_fixed_point(seed, ns, na, gamma):
    mdp = random_mdp(seed, ns, na, gamma)
    cb = construct_cb(mdp, "q_star")
    q = cb.reward
    assert np.allclose(q, mdp.reward + gamma * mdp.transition @ q.max(axis=1), atol=1e-8)
    assert cb.initial.sum() == pytest.approx(1.0) and np.all(cb.initial >= 0)
    _, v_star = value_iteration(mdp, tol=1e-12)
    for v in VARIANTS:
        assert np.allclose(policy_evaluation(mdp, construct_cb(mdp, v).greedy_policy()), v_star, atol=1e-8)


def test_random_mdp_has_unique_optimum():
    mdp = random_mdp(3, 6, 3, 0.9, min_gap=1e-3)
    q = construct_cb(mdp, "q_star").reward
    s = np.sort(q, axis=1)
    assert np.all(s[:, -1] - s[:, -2] > 1e-3)


def test_sweep_reports_all_variants():
    reps = exactness_sweep(n_mdps=10, max_states=5, max_actions=3, seed=1)
    assert [r.variant for r in reps] == list(VARIANTS)
    assert all(r.ok and r.passed == 10 and r.max_error <= 1e-8 for r in reps)


def test_unknown_variant():
    with pytest.raises(ContractError):
        construct_cb(self_loop(), "soft")
