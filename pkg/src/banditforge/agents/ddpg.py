"""Deterministic actor-critic: DDPG, and TD3 when ``twin`` is set."""

from __future__ import annotations

import numpy as np

from banditforge.agents.common import (
    Adam,
    Policy,
    ReplayBuffer,
    TrainLog,
    action_scale,
    check_finite,
    polyak,
)
from banditforge.agents.hparams import InnerTask
from banditforge.core import autodiff as ad
from banditforge.core.nets import forward, init_params
from banditforge.core.rng import Rng
from banditforge.envs.vec import VecEnv


def train_ddpg(task: InnerTask, env, rng: Rng, twin: bool = False):
    hp = task.hp
    space = env.action_space
    n_act = space.shape[0]
    scale, offset = action_scale(space)
    lo, hi = space.low_arr.astype(np.float32), space.high_arr.astype(np.float32)
    actor = task.net(env.obs_dim, n_act)
    critic = task.net(env.obs_dim + n_act, 1)
    pa = init_params(actor, rng.fold(0))
    qs = [init_params(critic, rng.fold(1 + i)) for i in range(2 if twin else 1)]
    ta, tqs = pa.copy(), [q.copy() for q in qs]
    opt_a = Adam([pa], hp["lr"], hp["max_grad_norm"])
    opt_q = Adam(qs, hp["lr"], hp["max_grad_norm"])
    delay = hp.get("policy_delay", 1) if twin else 1
    gen = rng.fold(4).generator()
    n_envs, bs = hp["num_envs"], hp["batch_size"]
    buf = ReplayBuffer(hp["buffer_size"], env.obs_dim, (n_act,), np.float32)
    venv = VecEnv(env, n_envs, rng.fold(5))
    obs = venv.reset()
    log = TrainLog()
    steps, updates, stats = 0, 0, []
    iters = task.total_steps // n_envs

    def act(params, o):
        return np.tanh(forward(actor, params, o)) * scale + offset

    for it in range(iters):
        if steps < hp["prefill"]:
            a = space.sample(gen, n_envs).astype(np.float32)
        else:
            a = act(pa, obs) + hp["expl_noise"] * scale * gen.standard_normal((n_envs, n_act))
            a = np.clip(a, lo, hi).astype(np.float32)
        nobs, r, term, _, final = venv.step(a)
        buf.add(obs, a, r, final, term)
        steps += n_envs
        obs = nobs
        if steps < hp["prefill"]:
            continue
        for _ in range(hp["grad_steps"]):
            o, a_b, rew, no, te = buf.sample(gen, bs)
            a_next = act(ta, no)
            if twin:
                eps = np.clip(hp["target_noise"] * gen.standard_normal(a_next.shape),
                              -hp["target_noise_clip"], hp["target_noise_clip"])
                a_next = np.clip(a_next + eps * scale, lo, hi)
            x_next = np.concatenate([no, a_next], axis=1).astype(np.float32)
            q_next = np.min([forward(critic, t, x_next)[:, 0] for t in tqs], axis=0)
            y = rew + hp["gamma"] * (1 - te) * q_next
            x = np.concatenate([o, a_b], axis=1)

            def q_loss(*ps):
                total = 0.0
                for p in ps:
                    total = total + ((ad.mlp(critic, p, x)[:, 0] - y) ** 2).mean()
                return total

            lq, gq = ad.value_and_grad(q_loss, *qs)
            opt_q.step(gq)
            updates += 1
            lp = np.nan
            if updates % delay == 0:
                def pi_loss(p):
                    a_pi = ad.tanh(ad.mlp(actor, p, o)) * scale + offset
                    return -ad.mlp(critic, qs[0], ad.concat([o, a_pi], axis=1)).mean()

                lp, gp = ad.value_and_grad(pi_loss, pa)
                opt_a.step(gp)
                polyak(ta, pa, hp["tau"])
                for t, q in zip(tqs, qs):
                    polyak(t, q, hp["tau"])
            stats.append((lq, lp))
        if it % 50 == 0 and stats:
            m = np.nanmean(stats, axis=0)
            log.record(steps, venv.episode_returns, q_loss=m[0], policy_loss=m[1])
            venv.episode_returns.clear()
            stats = []
    check_finite(pa, *qs)
    log.steps = steps
    return Policy(actor, pa.copy(), "tanh", scale, offset), log


def train_td3(task: InnerTask, env, rng: Rng):
    return train_ddpg(task, env, rng, twin=True)
