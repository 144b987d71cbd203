"""Batched stepping shared by the classic and synthetic environments.

Both families expose ``reset_state(gen, n)``, ``step_state(state, action)``,
``observe(state)``, ``obs_dim``, ``action_space`` and ``horizon``.
"""

from __future__ import annotations

import numpy as np

from banditforge.core.rng import Rng
from banditforge.envs.spaces import Box


def prepare_action(space, action) -> np.ndarray:
    """Clip continuous actions to the box; pass discrete indices through."""
    if isinstance(space, Box):
        a = np.asarray(action, dtype=np.float64).reshape(-1, space.shape[0])
        return np.clip(a, space.low_arr, space.high_arr)
    return np.asarray(action, dtype=np.int64).reshape(-1)


class VecEnv:
    """``n`` copies of an environment with automatic reset.

    ``step`` returns ``(obs, reward, terminated, truncated, final_obs)`` where
    ``obs`` already holds the first observation of a new episode for finished
    rows and ``final_obs`` the last observation of the finished episode.
    """

    def __init__(self, env, n: int, rng: Rng, horizon: int | None = None):
        self.env = env
        self.n = n
        self.horizon = env.horizon if horizon is None else int(horizon)
        self._gen = rng.generator()
        self.action_space = env.action_space
        self.obs_dim = env.obs_dim
        self.episode_returns: list[float] = []

    def reset(self) -> np.ndarray:
        self._state = self.env.reset_state(self._gen, self.n)
        self._t = np.zeros(self.n, dtype=np.int64)
        self._ret = np.zeros(self.n)
        self._obs = self.env.observe(self._state)
        return self._obs

    def step(self, action):
        a = prepare_action(self.action_space, action)
        state, reward, terminated = self.env.step_state(self._state, a)
        self._t += 1
        self._ret += reward
        truncated = ~terminated & (self._t >= self.horizon)
        obs = self.env.observe(state)
        final_obs = obs
        done = terminated | truncated
        if done.any():
            final_obs = obs.copy()
            idx = np.flatnonzero(done)
            fresh = self.env.reset_state(self._gen, len(idx))
            state = np.array(state, copy=True)
            state[idx] = fresh
            obs = obs.copy()
            obs[idx] = self.env.observe(fresh)
            self.episode_returns.extend(self._ret[idx].tolist())
            self._t[idx] = 0
            self._ret[idx] = 0.0
        self._state = state
        self._obs = obs
        return obs, reward, terminated, truncated, final_obs


def evaluate(env, policy, n_episodes: int, max_steps: int | None, rng: Rng) -> np.ndarray:
    """Undiscounted returns of ``n_episodes`` run in lock-step.

    ``policy`` maps a batch of observations to a batch of actions.  Episodes
    stop at termination or after ``max_steps`` steps (default: the horizon).
    """
    max_steps = env.horizon if max_steps is None else int(max_steps)
    gen = rng.generator()
    state = env.reset_state(gen, n_episodes)
    returns = np.zeros(n_episodes)
    alive = np.ones(n_episodes, dtype=bool)
    for _ in range(max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        sub = state[idx]
        a = prepare_action(env.action_space, policy(env.observe(sub)))
        nxt, r, term = env.step_state(sub, a)
        returns[idx] += r
        state = np.array(state, copy=True)
        state[idx] = nxt
        alive[idx[term]] = False
    return returns
