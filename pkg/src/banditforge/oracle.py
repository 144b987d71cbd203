"""Exact reduction of finite MDPs to contextual bandits.

A bandit whose reward ranks actions like the MDP's optimal Q-function has a
greedy policy that is optimal in the MDP.  ``construct_cb`` builds three such
bandits and ``exactness_sweep`` checks the claim on random MDPs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from banditforge.core.nets import ContractError
from banditforge.core.rng import Rng, as_rng
from banditforge.envs.tabular import (
    TabularMdp,
    greedy,
    occupancy,
    policy_evaluation,
    policy_iteration,
    reachable,
    value_iteration,
)

VARIANTS = ("q_star", "neg_distance", "indicator")


@dataclass(frozen=True)
class ConstructedCb:
    mdp: TabularMdp
    variant: str
    reward: np.ndarray  # [s, a]
    initial: np.ndarray  # [s]

    def greedy_policy(self) -> np.ndarray:
        return greedy(self.reward)


def construct_cb(mdp: TabularMdp, variant: str = "q_star") -> ConstructedCb:
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    q, _ = policy_iteration(mdp)
    pi = greedy(q)
    if variant == "q_star":
        return ConstructedCb(mdp, variant, q, occupancy(mdp, pi))
    actions = np.arange(mdp.n_actions)
    if variant == "neg_distance":
        reward = -np.abs(actions[None, :] - pi[:, None]).astype(np.float64)
    else:
        reward = (actions[None, :] == pi[:, None]).astype(np.float64)
    mask = reachable(mdp, pi)
    return ConstructedCb(mdp, variant, reward, mask / mask.sum())


def random_mdp(rng: Rng | int, n_states: int, n_actions: int, gamma: float,
               min_gap: float = 1e-6, max_tries: int = 1000) -> TabularMdp:
    """Random MDP whose optimal action is unique (by ``min_gap``) in every state."""
    gen = as_rng(rng).generator()
    for _ in range(max_tries):
        # sparse-ish transitions make some states unreachable, which exercises the alternates
        p = gen.random((n_states, n_actions, n_states)) ** 3
        p[p < 0.05] = 0.0
        empty = p.sum(axis=2) == 0
        p[empty, gen.integers(0, n_states, int(empty.sum()))] = 1.0
        p /= p.sum(axis=2, keepdims=True)
        r = gen.normal(size=(n_states, n_actions))
        init = gen.dirichlet(np.ones(n_states))
        mdp = TabularMdp(p, r, gamma, init)
        q, _ = policy_iteration(mdp)
        s = np.sort(q, axis=1)
        if n_actions == 1 or np.min(s[:, -1] - s[:, -2]) > min_gap:
            return mdp
    raise RuntimeError("could not draw an MDP with a unique optimal action")


@dataclass
class SweepReport:
    variant: str
    passed: int
    failed: int
    max_error: float

    @property
    def ok(self) -> bool:
        return self.failed == 0


def check_cb(cb: ConstructedCb) -> float:
    """Max |V^pi_B - V*| over states; pi_B is greedy on the bandit reward.

    V* comes from value iteration run to 1e-12, independent of the solver
    used to build the bandit.
    """
    _, v_star = value_iteration(cb.mdp, tol=1e-12)
    v_b = policy_evaluation(cb.mdp, cb.greedy_policy())
    return float(np.max(np.abs(v_b - v_star)))


def exactness_sweep(n_mdps: int = 100, max_states: int = 12, max_actions: int = 5,
                    variants=VARIANTS, seed: int = 0, tol: float = 1e-8,
                    gammas=(0.8, 0.9, 0.99)) -> list[SweepReport]:
    rng = Rng(seed)
    reports = {v: SweepReport(v, 0, 0, 0.0) for v in variants}
    for i in range(n_mdps):
        gen = rng.fold(i, 0).generator()
        ns = int(gen.integers(1, max_states + 1))
        na = int(gen.integers(1, max_actions + 1))
        gamma = float(gammas[int(gen.integers(len(gammas)))])
        mdp = random_mdp(rng.fold(i, 1), ns, na, gamma)
        for v in variants:
            err = check_cb(construct_cb(mdp, v))
            rep = reports[v]
            rep.max_error = max(rep.max_error, err)
            if err <= tol:
                rep.passed += 1
            else:
                rep.failed += 1
    return list(reports.values())
