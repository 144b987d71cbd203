"""Inner-loop algorithms, their hyperparameter grids and task sampling.

Each grid row is either a tuple of candidate values (with the value used in
fixed-configuration runs listed separately) or a single structural constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from banditforge.core.nets import ContractError, NetworkSpec
from banditforge.core.rng import Rng
from banditforge.envs import classic
from banditforge.envs.classic import EnvId
from banditforge.envs.spaces import Discrete

ALGOS = ("ppo", "sac", "dqn", "ddpg", "td3")
DISCRETE_ALGOS = ("ppo", "sac", "dqn")
CONTINUOUS_ALGOS = ("ppo", "sac", "ddpg", "td3")

_LR = (0.01, 0.005, 0.001, 0.0005, 0.0001)
_GAMMA = (1.0, 0.99, 0.95, 0.9, 0.8)
_TAU = (0.99, 0.95, 0.9, 0.7, 0.8)
_NOISE = (0.1, 0.2, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class Choice:
    values: tuple
    default: object


# structural constants first, then the sampled rows
GRIDS: dict[str, dict[str, object]] = {
    "ppo": {
        "num_envs": 5,
        "num_steps": 100,
        "epochs": 10,
        "minibatches": 10,
        "max_grad_norm": 10.0,
        "lr": Choice(_LR, 0.005),
        "gamma": Choice(_GAMMA, 0.99),
        "gae_lambda": Choice((1.0, 0.95, 0.9, 0.8, 0.5), 0.95),
        "clip_eps": Choice((0.1, 0.2, 0.3, 0.4, 0.5), 0.2),
        "ent_coef": Choice((0.0, 0.01, 0.05, 0.1, 0.5), 0.01),
        "vf_coef": Choice((0.0, 0.5, 1.0, 1.5, 2.0), 0.5),
    },
    "sac": {
        "num_envs": 5,
        "buffer_size": 2000,
        "prefill": 1000,
        "batch_size": 256,
        "grad_steps": 2,
        "lr": Choice(_LR, 0.005),
        "gamma": Choice(_GAMMA, 0.99),
        "tau": Choice(_TAU, 0.95),
        "target_entropy_ratio": Choice((0.1, 0.3, 0.5, 0.7, 0.9), 0.7),
    },
    "dqn": {
        "num_envs": 10,
        "buffer_size": 2000,
        "prefill": 1000,
        "batch_size": 100,
        "grad_steps": 1,
        "target_update": 50,
        "max_grad_norm": 10.0,
        "eps_start": 1.0,
        "eps_decay_frac": 0.5,
        "eps_end": Choice((0.01, 0.05, 0.1, 0.2), 0.05),
        "lr": Choice(_LR, 0.005),
        "gamma": Choice(_GAMMA, 0.99),
        "double": Choice((True, False), True),
    },
    "ddpg": {
        "num_envs": 1,
        "buffer_size": 2000,
        "prefill": 1000,
        "batch_size": 100,
        "grad_steps": 1,
        "max_grad_norm": 10.0,
        "lr": Choice(_LR, 0.005),
        "gamma": Choice(_GAMMA, 0.99),
        "tau": Choice(_TAU, 0.95),
        "expl_noise": Choice(_NOISE, 0.2),
    },
    "td3": {
        "num_envs": 1,
        "buffer_size": 2000,
        "prefill": 1000,
        "batch_size": 100,
        "grad_steps": 1,
        "max_grad_norm": 10.0,
        "policy_delay": 2,
        "lr": Choice(_LR, 0.005),
        "gamma": Choice(_GAMMA, 0.99),
        "tau": Choice(_TAU, 0.95),
        "expl_noise": Choice(_NOISE, 0.2),
        "target_noise": Choice(_NOISE, 0.2),
        "target_noise_clip": Choice((0.1, 0.4, 0.5, 0.7, 1.0, 1.3), 0.5),
    },
}


def algos_for(space) -> tuple[str, ...]:
    return DISCRETE_ALGOS if isinstance(space, Discrete) else CONTINUOUS_ALGOS


@dataclass(frozen=True)
class InnerTask:
    algo: str
    hp: dict = field(hash=False)
    total_steps: int = 10_000
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.algo not in ALGOS:
            raise ContractError(f"unknown algorithm {self.algo!r}; expected one of {ALGOS}")
        missing = set(GRIDS[self.algo]) - set(self.hp)
        if missing:
            raise ContractError(f"{self.algo} task is missing hyperparameters {sorted(missing)}")
        if self.total_steps < 1:
            raise ContractError("total_steps must be positive")

    def net(self, n_in: int, n_out: int) -> NetworkSpec:
        return NetworkSpec(n_in, self.hidden, n_out, self.activation)

    def to_dict(self) -> dict:
        return {
            "algo": self.algo,
            "hp": dict(self.hp),
            "total_steps": self.total_steps,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> InnerTask:
        return cls(d["algo"], dict(d["hp"]), int(d["total_steps"]), tuple(d["hidden"]), d["activation"])


def default_activation(env_id: EnvId | str, algo: str) -> str:
    # the Pendulum agents use ReLU; DQN only runs on discrete tasks
    return "relu" if EnvId.parse(env_id) is EnvId.PendulumV1 and algo != "dqn" else "tanh"


def make_task(env_id: EnvId | str, algo: str, rng: Rng | None = None, fixed: bool = True,
              total_steps: int = 10_000, **overrides) -> InnerTask:
    """Build a task for ``algo``; sampled rows are drawn from ``rng`` unless ``fixed``."""
    env_id = EnvId.parse(env_id)
    space = classic.make(env_id).action_space
    if algo not in algos_for(space):
        kind = "discrete" if isinstance(space, Discrete) else "continuous"
        raise ContractError(f"{algo} does not support the {kind} action space of {env_id.value}")
    gen = None if fixed else rng.generator()
    hp = {}
    for name, row in GRIDS[algo].items():
        if not isinstance(row, Choice):
            hp[name] = row
            continue
        values = row.values
        if name == "lr" and algo == "ppo" and not isinstance(space, Discrete):
            values = tuple(v for v in values if v != 0.01)
        hp[name] = row.default if fixed else values[int(gen.integers(len(values)))]
    unknown = set(overrides) - set(hp)
    if unknown:
        raise ContractError(f"unknown hyperparameters {sorted(unknown)} for {algo}")
    hp.update(overrides)
    return InnerTask(algo, hp, total_steps, (64, 64), default_activation(env_id, algo))


def sample_task(env_id: EnvId | str, rng: Rng, fixed: bool = False, algo: str | None = None,
                total_steps: int = 10_000) -> InnerTask:
    """Draw an inner-loop task; the algorithm is uniform over the admissible set unless given."""
    if algo is None:
        options = algos_for(classic.make(env_id).action_space)
        algo = options[int(rng.fold(0).generator().integers(len(options)))]
    return make_task(env_id, algo, rng.fold(1), fixed=fixed, total_steps=total_steps)


def grid_values(algo: str, name: str) -> tuple:
    row = GRIDS[algo][name]
    return row.values if isinstance(row, Choice) else (row,)
