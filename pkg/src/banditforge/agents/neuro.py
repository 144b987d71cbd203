"""Gradient-free policy training: SNES over the weights of a policy net."""

from __future__ import annotations

import numpy as np

from banditforge import evolution
from banditforge.agents.common import Policy, action_scale
from banditforge.core.nets import NetworkSpec, init_params
from banditforge.core.rng import Rng
from banditforge.envs.spaces import Discrete
from banditforge.envs.vec import evaluate


def policy_for(env, net: NetworkSpec, params: np.ndarray) -> Policy:
    if isinstance(env.action_space, Discrete):
        return Policy(net, params, "argmax")
    scale, offset = action_scale(env.action_space)
    return Policy(net, params, "tanh", scale, offset)


def evolve_policy_params(env, net: NetworkSpec, generations: int, popsize: int, rng: Rng,
                         episodes: int = 8, sigma0: float = 0.1, max_steps: int | None = None):
    """Returns ``(best_params, final_state, history)``.

    Every member of a generation is scored on the same episode seeds.
    """
    mu0 = init_params(net, rng.fold(0), dtype=np.float64)
    gen_counter = [0]

    def evaluate_population(pop):
        ep_rng = rng.fold(1, gen_counter[0])
        gen_counter[0] += 1
        out = []
        for x in pop:
            pol = policy_for(env, net, x.astype(np.float32))
            try:
                out.append(float(np.mean(evaluate(env, pol, episodes, max_steps, ep_rng))))
            except FloatingPointError:
                out.append(float("nan"))
        return out

    best, _, state, history = evolution.optimize(
        None,
        generations=generations,
        popsize=popsize,
        rng=rng.fold(2),
        mu0=mu0,
        sigma0=sigma0,
        evaluate_population=evaluate_population,
    )
    return best.astype(np.float32), state, history


def neuroevolve_policy(env, net: NetworkSpec, generations: int, popsize: int, rng: Rng, **kw) -> Policy:
    params, _, _ = evolve_policy_params(env, net, generations, popsize, rng, **kw)
    return policy_for(env, net, params)
