"""Finite MDPs with exact dynamic-programming solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from banditforge.core.nets import ContractError


@dataclass(frozen=True)
class TabularMdp:
    transition: np.ndarray  # [s, a, s']
    reward: np.ndarray  # [s, a]
    discount: float
    initial: np.ndarray = field(default=None)  # [s]; uniform when omitted

    def __post_init__(self) -> None:
        p = np.asarray(self.transition, dtype=np.float64)
        r = np.asarray(self.reward, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or r.shape != p.shape[:2]:
            raise ContractError(f"inconsistent shapes: transition {p.shape}, reward {r.shape}")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=2) - 1)) > 1e-9:
            raise ContractError("transition rows must be probability distributions")
        if not np.all(np.isfinite(r)):
            raise ContractError("rewards must be finite")
        if not 0 < self.discount < 1:
            raise ContractError(f"discount must lie in (0, 1), got {self.discount}")
        init = np.full(p.shape[0], 1 / p.shape[0]) if self.initial is None else np.asarray(self.initial, float)
        if init.shape != (p.shape[0],) or np.any(init < 0) or abs(init.sum() - 1) > 1e-9:
            raise ContractError("initial distribution must be a probability vector over states")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial", init)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


def bellman(mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    return mdp.reward + mdp.discount * mdp.transition @ q.max(axis=1)


def value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 1_000_000):
    """Return ``(Q*, V*)`` with sup-norm Bellman residual below ``tol``."""
    if tol <= 0:
        raise ContractError("tol must be positive")
    q = np.zeros_like(mdp.reward)
    for _ in range(max_iter):
        q_new = bellman(mdp, q)
        if np.max(np.abs(q_new - q)) < tol * (1 - mdp.discount):
            # the contraction bound makes the residual of q_new smaller than tol
            q = q_new
            break
        q = q_new
    else:
        raise RuntimeError("value iteration did not converge")
    return q, q.max(axis=1)


def _policy_matrix(mdp: TabularMdp, policy) -> np.ndarray:
    pi = np.asarray(policy)
    if pi.ndim == 1:
        out = np.zeros((mdp.n_states, mdp.n_actions))
        out[np.arange(mdp.n_states), pi.astype(int)] = 1.0
        return out
    if pi.shape != (mdp.n_states, mdp.n_actions) or np.max(np.abs(pi.sum(axis=1) - 1)) > 1e-9:
        raise ContractError("stochastic policy rows must sum to 1")
    return pi


def policy_evaluation(mdp: TabularMdp, policy) -> np.ndarray:
    """Exact V^pi by solving (I - gamma P_pi) V = R_pi.

    ``policy`` is an action index per state or an [s, a] distribution.
    """
    pi = _policy_matrix(mdp, policy)
    p_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    r_pi = (pi * mdp.reward).sum(axis=1)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * p_pi, r_pi)


def occupancy(mdp: TabularMdp, policy, initial: np.ndarray | None = None) -> np.ndarray:
    """Normalised discounted state-visitation distribution of ``policy``."""
    pi = _policy_matrix(mdp, policy)
    p_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    rho = mdp.initial if initial is None else np.asarray(initial, float)
    d = np.linalg.solve((np.eye(mdp.n_states) - mdp.discount * p_pi).T, rho)
    d = np.clip(d, 0, None)
    return d / d.sum()


def reachable(mdp: TabularMdp, policy) -> np.ndarray:
    """Boolean mask of states reachable from the initial support under ``policy``."""
    pi = _policy_matrix(mdp, policy)
    p_pi = np.einsum("sa,sat->st", pi, mdp.transition) > 0
    seen = mdp.initial > 0
    frontier = seen.copy()
    while frontier.any():
        nxt = p_pi[frontier].any(axis=0) & ~seen
        seen |= nxt
        frontier = nxt
    return seen


def greedy(q: np.ndarray) -> np.ndarray:
    """Argmax per row with ties to the lowest index."""
    return np.argmax(q, axis=1)


def q_from_v(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    return mdp.reward + mdp.discount * mdp.transition @ v


def policy_iteration(mdp: TabularMdp, max_iter: int = 10_000):
    """Exact ``(Q*, V*)`` via Howard's policy iteration (linear solves)."""
    q, _ = value_iteration(mdp, tol=1e-6)
    pi = greedy(q)
    for _ in range(max_iter):
        v = policy_evaluation(mdp, pi)
        q = q_from_v(mdp, v)
        best = q.max(axis=1, keepdims=True)
        # only switch when the improvement is above round-off
        improvable = q[np.arange(mdp.n_states), pi] < best[:, 0] - 1e-12 * (1 + np.abs(best[:, 0]))
        if not improvable.any():
            return q, v
        pi = np.where(improvable, greedy(q), pi)
    raise RuntimeError("policy iteration did not converge")
