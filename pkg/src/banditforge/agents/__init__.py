"""Inner-loop RL algorithms.

:func:`train` dispatches on ``task.algo`` and accepts any batched environment
(classic or synthetic).  Every trainer returns a deterministic
:class:`~banditforge.agents.common.Policy` and a :class:`TrainLog`.
"""

from __future__ import annotations

from banditforge.agents.common import Policy, TrainLog
from banditforge.agents.ddpg import train_ddpg, train_td3
from banditforge.agents.dqn import train_dqn
from banditforge.agents.hparams import InnerTask, algos_for, make_task, sample_task
from banditforge.agents.ppo import gae, train_ppo
from banditforge.agents.sac import train_sac
from banditforge.core.nets import ContractError
from banditforge.core.rng import Rng

_TRAINERS = {"ppo": train_ppo, "dqn": train_dqn, "sac": train_sac, "ddpg": train_ddpg, "td3": train_td3}

__all__ = [
    "InnerTask",
    "Policy",
    "TrainLog",
    "algos_for",
    "gae",
    "make_task",
    "sample_task",
    "train",
]


def train(task: InnerTask, env, rng: Rng) -> tuple[Policy, TrainLog]:
    if task.algo not in algos_for(env.action_space):
        raise ContractError(f"{task.algo} cannot act in {env.action_space}")
    return _TRAINERS[task.algo](task, env, rng)
