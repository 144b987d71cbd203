"""The five classic-control evaluation environments.

Dynamics follow the standard gym/gymnax definitions.  Each environment is a
stateless object operating on batches of physics states (one row per
environment instance); the compiled kernels do the stepping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from banditforge import kernels
from banditforge.core.nets import ContractError
from banditforge.core.rng import Rng
from banditforge.envs.spaces import Box, Discrete


class EnvId(str, Enum):
    CartPoleV1 = "CartPole-v1"
    MountainCarV0 = "MountainCar-v0"
    ContinuousMountainCarV0 = "MountainCarContinuous-v0"
    PendulumV1 = "Pendulum-v1"
    AcrobotV1 = "Acrobot-v1"

    @classmethod
    def parse(cls, name: str | EnvId) -> EnvId:
        if isinstance(name, EnvId):
            return name
        name = _ALIASES.get(name, name)
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(e.value for e in cls)
            raise ContractError(f"unknown environment {name!r}; expected one of {valid}") from None


# the continuous task is also written "ContinuousMountainCar-v0"
_ALIASES = {"ContinuousMountainCar-v0": "MountainCarContinuous-v0"}


class ClassicEnv:
    env_id: EnvId
    obs_dim: int
    state_dim: int
    action_space: Discrete | Box
    horizon: int
    # finite observation ranges used for analysis grids and probes
    obs_low: tuple[float, ...]
    obs_high: tuple[float, ...]

    def reset_state(self, gen: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def step_state(self, state: np.ndarray, action: np.ndarray):
        raise NotImplementedError

    def observe(self, state: np.ndarray) -> np.ndarray:
        return state.astype(np.float32)

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.env_id.value}>"


class CartPole(ClassicEnv):
    env_id = EnvId.CartPoleV1
    obs_dim = state_dim = 4
    action_space = Discrete(2)
    horizon = 500
    obs_low = (-2.4, -3.0, -0.2095, -3.5)
    obs_high = (2.4, 3.0, 0.2095, 3.5)

    def reset_state(self, gen, n):
        return gen.uniform(-0.05, 0.05, (n, 4))

    def step_state(self, state, action):
        return kernels.cartpole_step(state, action)


class MountainCar(ClassicEnv):
    env_id = EnvId.MountainCarV0
    obs_dim = state_dim = 2
    action_space = Discrete(3)
    horizon = 200
    obs_low = (-1.2, -0.07)
    obs_high = (0.6, 0.07)

    def reset_state(self, gen, n):
        return np.stack([gen.uniform(-0.6, -0.4, n), np.zeros(n)], axis=1)

    def step_state(self, state, action):
        return kernels.mountaincar_step(state, action)


class ContinuousMountainCar(ClassicEnv):
    env_id = EnvId.ContinuousMountainCarV0
    obs_dim = state_dim = 2
    action_space = Box((-1.0,), (1.0,))
    horizon = 999
    obs_low = (-1.2, -0.07)
    obs_high = (0.6, 0.07)

    def reset_state(self, gen, n):
        return np.stack([gen.uniform(-0.6, -0.4, n), np.zeros(n)], axis=1)

    def step_state(self, state, action):
        return kernels.continuous_mountaincar_step(state, action)


class Pendulum(ClassicEnv):
    env_id = EnvId.PendulumV1
    obs_dim = 3
    state_dim = 2
    action_space = Box((-2.0,), (2.0,))
    horizon = 200
    obs_low = (-1.0, -1.0, -8.0)
    obs_high = (1.0, 1.0, 8.0)

    def reset_state(self, gen, n):
        return np.stack([gen.uniform(-math.pi, math.pi, n), gen.uniform(-1.0, 1.0, n)], axis=1)

    def step_state(self, state, action):
        return kernels.pendulum_step(state, action)

    def observe(self, state):
        th, thdot = state[:, 0], state[:, 1]
        return np.stack([np.cos(th), np.sin(th), thdot], axis=1).astype(np.float32)


class Acrobot(ClassicEnv):
    env_id = EnvId.AcrobotV1
    obs_dim = 6
    state_dim = 4
    action_space = Discrete(3)
    horizon = 500
    obs_low = (-1.0, -1.0, -1.0, -1.0, -4 * math.pi, -9 * math.pi)
    obs_high = (1.0, 1.0, 1.0, 1.0, 4 * math.pi, 9 * math.pi)

    def reset_state(self, gen, n):
        return gen.uniform(-0.1, 0.1, (n, 4))

    def step_state(self, state, action):
        return kernels.acrobot_step(state, action)

    def observe(self, state):
        t1, t2 = state[:, 0], state[:, 1]
        return np.stack(
            [np.cos(t1), np.sin(t1), np.cos(t2), np.sin(t2), state[:, 2], state[:, 3]], axis=1
        ).astype(np.float32)


_ENVS = {cls.env_id: cls() for cls in (CartPole, MountainCar, ContinuousMountainCar, Pendulum, Acrobot)}


def make(env_id: str | EnvId) -> ClassicEnv:
    return _ENVS[EnvId.parse(env_id)]


def _check_action(env: ClassicEnv, action):
    space = env.action_space
    if isinstance(space, Discrete):
        if np.ndim(action) != 0 or not space.contains(action):
            raise ContractError(f"action {action!r} outside Discrete({space.n}) for {env.env_id.value}")
        return np.array([int(action)])
    a = np.atleast_1d(np.asarray(action, dtype=np.float64))
    if a.shape != space.shape or not space.contains(a):
        raise ContractError(f"action {action!r} outside box [{space.low}, {space.high}]")
    return a[None]


# --- single-environment functional API -------------------------------------

@dataclass(frozen=True)
class EnvState:
    obs: np.ndarray
    t: int
    done: bool
    truncated: bool
    physics: np.ndarray
    horizon: int


def reset(env_id: str | EnvId, rng: Rng, horizon: int | None = None) -> EnvState:
    env = make(env_id)
    physics = env.reset_state(rng.generator(), 1)[0]
    h = env.horizon if horizon is None else int(horizon)
    return EnvState(env.observe(physics[None])[0], 0, False, False, physics, h)


def step(env_id: str | EnvId, state: EnvState, action) -> tuple[EnvState, float]:
    env = make(env_id)
    if state.done or state.truncated:
        raise ContractError("step called on a finished episode")
    a = _check_action(env, action)
    physics, reward, terminated = env.step_state(state.physics[None], a)
    t = state.t + 1
    done = bool(terminated[0])
    new = replace(
        state,
        obs=env.observe(physics)[0],
        t=t,
        done=done,
        truncated=(not done) and t >= state.horizon,
        physics=physics[0],
    )
    return new, float(reward[0])


def rollout(env_id: str | EnvId, policy, max_steps: int, rng: Rng) -> float:
    """Undiscounted return of one episode capped at ``max_steps`` steps.

    ``policy`` maps a single observation to an action.
    """
    if max_steps < 1:
        raise ContractError("max_steps must be >= 1")
    state = reset(env_id, rng, horizon=max_steps)
    total = 0.0
    while not (state.done or state.truncated):
        state, r = step(env_id, state, policy(state.obs))
        total += r
    return total
