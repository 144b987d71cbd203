from __future__ import annotations

import numpy as np

from banditforge.agents.common import Adam, Policy, TrainLog, check_finite, unused_steps_note
from banditforge.agents.hparams import InnerTask
from banditforge.core import autodiff as ad
from banditforge.core.nets import forward, init_params
from banditforge.core.rng import Rng
from banditforge.envs.spaces import Discrete
from banditforge.envs.vec import VecEnv


def gae(rewards, values, dones, gamma: float, lam: float, terminated=None, next_values=None):
    """Generalized advantage estimates along axis 0.

    ``values`` has one more entry than ``rewards``; its last element is the
    bootstrap value after the final step.  ``dones[t]`` marks the end of an
    episode after step ``t``.  By default every done is a termination.  Pass
    ``terminated`` and ``next_values`` (value of the true successor of each
    step) to let truncated steps bootstrap from their final observation.
    """
    rewards = np.asarray(rewards, np.float64)
    values = np.asarray(values, np.float64)
    dones = np.asarray(dones, bool)
    T = len(rewards)
    if values.shape[0] != T + 1 or dones.shape[0] != T:
        raise ValueError("values needs T+1 entries and dones T entries")
    term = dones if terminated is None else np.asarray(terminated, bool)
    succ = values[1:].copy()
    if next_values is not None:
        trunc = dones & ~term
        succ = np.where(trunc, np.asarray(next_values, np.float64), succ)
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * (~term[t]) * succ[t] - values[t]
        last = delta + gamma * lam * (~dones[t]) * last
        adv[t] = last
    return adv


def clipped_surrogate(ratio, adv, eps: float):
    """Elementwise min(r * A, clip(r, 1-eps, 1+eps) * A) on the tape."""
    return ad.minimum(ratio * adv, ad.clip(ratio, 1 - eps, 1 + eps) * adv)


def train_ppo(task: InnerTask, env, rng: Rng):
    hp = task.hp
    discrete = isinstance(env.action_space, Discrete)
    n_act = env.action_space.n if discrete else env.action_space.shape[0]
    actor = task.net(env.obs_dim, n_act)
    critic = task.net(env.obs_dim, 1)
    pa = init_params(actor, rng.fold(0))
    pc = init_params(critic, rng.fold(1))
    log_std = np.zeros(n_act, np.float32)
    params = [pa, pc] + ([] if discrete else [log_std])
    opt = Adam(params, hp["lr"], hp["max_grad_norm"])
    gen = rng.fold(2).generator()

    n_envs, n_steps = hp["num_envs"], hp["num_steps"]
    batch = n_envs * n_steps
    n_updates = task.total_steps // batch
    log = TrainLog(note=unused_steps_note(task.total_steps, n_updates * batch, "rollout granularity"))
    venv = VecEnv(env, n_envs, rng.fold(3))
    obs = venv.reset()
    mb_size = batch // hp["minibatches"]
    eps, gamma, lam = hp["clip_eps"], hp["gamma"], hp["gae_lambda"]

    for update in range(n_updates):
        obs_buf = np.zeros((n_steps, n_envs, env.obs_dim), np.float32)
        act_buf = np.zeros((n_steps, n_envs) if discrete else (n_steps, n_envs, n_act),
                           np.int64 if discrete else np.float32)
        logp_buf = np.zeros((n_steps, n_envs))
        val_buf = np.zeros((n_steps + 1, n_envs))
        rew_buf = np.zeros((n_steps, n_envs))
        done_buf = np.zeros((n_steps, n_envs), bool)
        term_buf = np.zeros((n_steps, n_envs), bool)
        final_buf = np.zeros((n_steps, n_envs, env.obs_dim), np.float32)
        for t in range(n_steps):
            out = forward(actor, pa, obs)
            val_buf[t] = forward(critic, pc, obs)[:, 0]
            if discrete:
                z = out - out.max(axis=1, keepdims=True)
                logp_all = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
                a = (np.exp(logp_all).cumsum(axis=1) > gen.random((n_envs, 1))).argmax(axis=1)
                logp = logp_all[np.arange(n_envs), a]
            else:
                std = np.exp(log_std)
                a = (out + std * gen.standard_normal(out.shape)).astype(np.float32)
                logp = (-0.5 * ((a - out) / std) ** 2 - log_std - 0.5 * np.log(2 * np.pi)).sum(axis=1)
            obs_buf[t], act_buf[t], logp_buf[t] = obs, a, logp
            obs, r, term, trunc, final = venv.step(a)
            rew_buf[t], term_buf[t], done_buf[t], final_buf[t] = r, term, term | trunc, final
        val_buf[n_steps] = forward(critic, pc, obs)[:, 0]
        next_vals = forward(critic, pc, final_buf.reshape(-1, env.obs_dim))[:, 0].reshape(n_steps, n_envs)
        adv = gae(rew_buf, val_buf, done_buf, gamma, lam, term_buf, next_vals)
        ret = adv + val_buf[:-1]

        b_obs = obs_buf.reshape(batch, -1)
        b_act = act_buf.reshape(batch) if discrete else act_buf.reshape(batch, n_act)
        b_logp, b_adv, b_ret = logp_buf.ravel(), adv.ravel(), ret.ravel()
        losses = []
        for _ in range(hp["epochs"]):
            perm = gen.permutation(batch)
            for k in range(hp["minibatches"]):
                idx = perm[k * mb_size : (k + 1) * mb_size]
                a_mb = b_act[idx]
                adv_mb = b_adv[idx]
                adv_mb = (adv_mb - adv_mb.mean()) / (adv_mb.std() + 1e-8)

                def loss_fn(pa_t, pc_t, *rest):
                    out = ad.mlp(actor, pa_t, b_obs[idx])
                    if discrete:
                        lsm = ad.log_softmax(out)
                        logp = lsm[np.arange(len(idx)), a_mb]
                        entropy = -(ad.exp(lsm) * lsm).sum(axis=1).mean()
                    else:
                        ls = rest[0]
                        logp = ad.gaussian_logpdf(a_mb, out, ls).sum(axis=1)
                        entropy = ls.sum() + n_act * (0.5 + 0.5 * np.log(2 * np.pi))
                    ratio = ad.exp(logp - b_logp[idx])
                    pg = -clipped_surrogate(ratio, adv_mb, eps).mean()
                    v = ad.mlp(critic, pc_t, b_obs[idx])[:, 0]
                    vloss = 0.5 * ((v - b_ret[idx]) ** 2).mean()
                    total = pg + hp["vf_coef"] * vloss - hp["ent_coef"] * entropy
                    losses.append((total.item(), pg.item(), vloss.item(), entropy.item()))
                    return total

                ps = [ad.param(p) for p in params]
                grads = ad.grad(loss_fn(*ps), ps)
                opt.step(grads)
        check_finite(*params)
        m = np.mean(losses, axis=0)
        log.record((update + 1) * batch, venv.episode_returns, loss=m[0], policy_loss=m[1],
                   value_loss=m[2], entropy=m[3])
        venv.episode_returns.clear()
    log.steps = n_updates * batch
    return Policy(actor, pa.copy(), "argmax" if discrete else "mean"), log
