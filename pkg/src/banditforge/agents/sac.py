"""Soft actor-critic with twin critics and learned temperature.

Discrete actions use an explicit softmax policy and exact expectations over
actions.  Continuous actions use a tanh-squashed Gaussian with the
reparameterisation trick.
"""

from __future__ import annotations

import math

import numpy as np

from banditforge.agents.common import (
    Adam,
    Policy,
    ReplayBuffer,
    TrainLog,
    action_scale,
    check_finite,
    polyak,
    unused_steps_note,
)
from banditforge.agents.hparams import InnerTask
from banditforge.core import autodiff as ad
from banditforge.core.nets import forward, init_params
from banditforge.core.rng import Rng
from banditforge.envs.spaces import Discrete
from banditforge.envs.vec import VecEnv

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _squashed_sample(out, n_act, noise, scale, offset):
    """Numpy forward of the squashed Gaussian: returns (action, log_prob)."""
    mean = out[:, :n_act]
    log_std = np.clip(out[:, n_act:], LOG_STD_MIN, LOG_STD_MAX)
    u = mean + np.exp(log_std) * noise
    t = np.tanh(u)
    logp = (-0.5 * noise**2 - log_std - 0.5 * math.log(2 * math.pi)).sum(axis=1)
    logp -= np.log(scale * (1 - t * t) + 1e-6).sum(axis=1)
    return (t * scale + offset).astype(np.float32), logp


def train_sac(task: InnerTask, env, rng: Rng):
    if isinstance(env.action_space, Discrete):
        return _train_discrete(task, env, rng)
    return _train_continuous(task, env, rng)


def _setup(task, env, rng, n_in_critic, n_out_critic, n_out_actor):
    actor = task.net(env.obs_dim, n_out_actor)
    critic = task.net(n_in_critic, n_out_critic)
    pa = init_params(actor, rng.fold(0))
    q1, q2 = init_params(critic, rng.fold(1)), init_params(critic, rng.fold(2))
    return actor, critic, pa, q1, q2


def _train_discrete(task: InnerTask, env, rng: Rng):
    hp = task.hp
    n_act = env.action_space.n
    actor, critic, pa, q1, q2 = _setup(task, env, rng, env.obs_dim, n_act, n_act)
    t1, t2 = q1.copy(), q2.copy()
    log_alpha = np.zeros(1, np.float32)
    opt_a, opt_q, opt_t = Adam([pa], hp["lr"]), Adam([q1, q2], hp["lr"]), Adam([log_alpha], hp["lr"])
    target_entropy = hp["target_entropy_ratio"] * math.log(n_act)
    gen = rng.fold(4).generator()
    n_envs, bs = hp["num_envs"], hp["batch_size"]
    buf = ReplayBuffer(hp["buffer_size"], env.obs_dim, (), np.int64)
    venv = VecEnv(env, n_envs, rng.fold(5))
    obs = venv.reset()
    log = TrainLog()
    steps, stats = 0, []
    ar = np.arange(bs)
    iters = task.total_steps // n_envs
    log.note = unused_steps_note(task.total_steps, iters * n_envs, "vector stepping")

    for it in range(iters):
        if steps < hp["prefill"]:
            a = gen.integers(0, n_act, n_envs)
        else:
            p = np.exp(_log_softmax(forward(actor, pa, obs)))
            a = (p.cumsum(axis=1) > gen.random((n_envs, 1))).argmax(axis=1)
        nobs, r, term, _, final = venv.step(a)
        buf.add(obs, a, r, final, term)
        steps += n_envs
        obs = nobs
        if steps < hp["prefill"]:
            continue
        for _ in range(hp["grad_steps"]):
            o, act, rew, no, te = buf.sample(gen, bs)
            alpha = float(np.exp(log_alpha[0]))
            lp_next = _log_softmax(forward(actor, pa, no))
            q_next = np.minimum(forward(critic, t1, no), forward(critic, t2, no))
            v_next = (np.exp(lp_next) * (q_next - alpha * lp_next)).sum(axis=1)
            y = rew + hp["gamma"] * (1 - te) * v_next

            def q_loss(p1, p2):
                e1 = ad.mlp(critic, p1, o)[ar, act] - y
                e2 = ad.mlp(critic, p2, o)[ar, act] - y
                return (e1**2).mean() + (e2**2).mean()

            lq, gq = ad.value_and_grad(q_loss, q1, q2)
            opt_q.step(gq)

            q_min = np.minimum(forward(critic, q1, o), forward(critic, q2, o))

            def pi_loss(p):
                lsm = ad.log_softmax(ad.mlp(actor, p, o))
                probs = ad.exp(lsm)
                return (probs * (alpha * lsm - q_min)).sum(axis=1).mean()

            lp, gp = ad.value_and_grad(pi_loss, pa)
            opt_a.step(gp)

            lsm = _log_softmax(forward(actor, pa, o))
            entropy = float(-(np.exp(lsm) * lsm).sum(axis=1).mean())
            # d/d log_alpha of log_alpha * (H - H_target)
            opt_t.step([np.array([entropy - target_entropy], np.float32)])
            polyak(t1, q1, hp["tau"])
            polyak(t2, q2, hp["tau"])
            stats.append((lq, lp, alpha, entropy))
        if it % 10 == 0 and stats:
            m = np.mean(stats, axis=0)
            log.record(steps, venv.episode_returns, q_loss=m[0], policy_loss=m[1], alpha=m[2], entropy=m[3])
            venv.episode_returns.clear()
            stats = []
    check_finite(pa, q1, q2)
    log.steps = steps
    log.artifacts = {"critic": critic, "q1": q1.copy(), "q2": q2.copy()}
    return Policy(actor, pa.copy(), "argmax"), log


def _train_continuous(task: InnerTask, env, rng: Rng):
    hp = task.hp
    space = env.action_space
    n_act = space.shape[0]
    scale, offset = action_scale(space)
    actor, critic, pa, q1, q2 = _setup(task, env, rng, env.obs_dim + n_act, 1, 2 * n_act)
    t1, t2 = q1.copy(), q2.copy()
    log_alpha = np.zeros(1, np.float32)
    opt_a, opt_q, opt_t = Adam([pa], hp["lr"]), Adam([q1, q2], hp["lr"]), Adam([log_alpha], hp["lr"])
    target_entropy = -float(n_act)
    gen = rng.fold(4).generator()
    n_envs, bs = hp["num_envs"], hp["batch_size"]
    buf = ReplayBuffer(hp["buffer_size"], env.obs_dim, (n_act,), np.float32)
    venv = VecEnv(env, n_envs, rng.fold(5))
    obs = venv.reset()
    log = TrainLog()
    steps, stats = 0, []
    iters = task.total_steps // n_envs
    log.note = unused_steps_note(task.total_steps, iters * n_envs, "vector stepping")

    for it in range(iters):
        if steps < hp["prefill"]:
            a = space.sample(gen, n_envs).astype(np.float32)
        else:
            a, _ = _squashed_sample(forward(actor, pa, obs), n_act, gen.standard_normal((n_envs, n_act)),
                                    scale, offset)
        nobs, r, term, _, final = venv.step(a)
        buf.add(obs, a, r, final, term)
        steps += n_envs
        obs = nobs
        if steps < hp["prefill"]:
            continue
        for _ in range(hp["grad_steps"]):
            o, act, rew, no, te = buf.sample(gen, bs)
            alpha = float(np.exp(log_alpha[0]))
            a_next, lp_next = _squashed_sample(forward(actor, pa, no), n_act,
                                               gen.standard_normal((bs, n_act)), scale, offset)
            x_next = np.concatenate([no, a_next], axis=1)
            q_next = np.minimum(forward(critic, t1, x_next), forward(critic, t2, x_next))[:, 0]
            y = rew + hp["gamma"] * (1 - te) * (q_next - alpha * lp_next)
            x = np.concatenate([o, act], axis=1)

            def q_loss(p1, p2):
                e1 = ad.mlp(critic, p1, x)[:, 0] - y
                e2 = ad.mlp(critic, p2, x)[:, 0] - y
                return (e1**2).mean() + (e2**2).mean()

            lq, gq = ad.value_and_grad(q_loss, q1, q2)
            opt_q.step(gq)

            noise = gen.standard_normal((bs, n_act)).astype(np.float32)

            def pi_loss(p):
                out = ad.mlp(actor, p, o)
                mean = out[:, :n_act]
                log_std = ad.clip(out[:, n_act:], LOG_STD_MIN, LOG_STD_MAX)
                u = mean + ad.exp(log_std) * noise
                t = ad.tanh(u)
                logp = (-0.5 * noise**2 - log_std - 0.5 * math.log(2 * math.pi)).sum(axis=1)
                logp = logp - ad.log(scale * (1 - t * t) + 1e-6).sum(axis=1)
                a_pi = t * scale + offset
                xa = ad.concat([o, a_pi], axis=1)
                qa = ad.minimum(ad.mlp(critic, q1, xa), ad.mlp(critic, q2, xa))[:, 0]
                pi_loss.logp = logp.value
                return (alpha * logp - qa).mean()

            lp, gp = ad.value_and_grad(pi_loss, pa)
            opt_a.step(gp)
            entropy = float(-pi_loss.logp.mean())
            opt_t.step([np.array([entropy - target_entropy], np.float32)])
            polyak(t1, q1, hp["tau"])
            polyak(t2, q2, hp["tau"])
            stats.append((lq, lp, alpha, entropy))
        if it % 10 == 0 and stats:
            m = np.mean(stats, axis=0)
            log.record(steps, venv.episode_returns, q_loss=m[0], policy_loss=m[1], alpha=m[2], entropy=m[3])
            venv.episode_returns.clear()
            stats = []
    check_finite(pa, q1, q2)
    log.steps = steps
    log.artifacts = {"critic": critic, "q1": q1.copy(), "q2": q2.copy()}
    return Policy(actor, pa.copy(), "tanh", scale, offset, out_dim=n_act), log
