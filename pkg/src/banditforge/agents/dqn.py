from __future__ import annotations

import numpy as np

from banditforge.agents.common import Adam, Policy, ReplayBuffer, TrainLog, check_finite
from banditforge.agents.hparams import InnerTask
from banditforge.core import autodiff as ad
from banditforge.core.nets import forward, init_params
from banditforge.core.rng import Rng
from banditforge.envs.vec import VecEnv


def td_target(rew, term, gamma: float, q_next_target, q_next_online=None):
    """One-step Q target; with ``q_next_online`` the action is chosen by the online net (DDQN)."""
    chooser = q_next_target if q_next_online is None else q_next_online
    a = np.argmax(chooser, axis=1)
    boot = q_next_target[np.arange(len(a)), a]
    return rew + gamma * (1.0 - term) * boot


def epsilon(step: int, total: int, start: float, end: float, frac: float) -> float:
    span = max(1.0, frac * total)
    return end + (start - end) * max(0.0, 1 - step / span)


def train_dqn(task: InnerTask, env, rng: Rng):
    hp = task.hp
    n_act = env.action_space.n
    net = task.net(env.obs_dim, n_act)
    online = init_params(net, rng.fold(0))
    target = online.copy()
    opt = Adam([online], hp["lr"], hp["max_grad_norm"])
    gen = rng.fold(2).generator()
    n_envs = hp["num_envs"]
    buf = ReplayBuffer(hp["buffer_size"], env.obs_dim, (), np.int64)
    venv = VecEnv(env, n_envs, rng.fold(3))
    obs = venv.reset()
    log = TrainLog()
    iters = task.total_steps // n_envs
    extra = task.total_steps - iters * n_envs
    updates, steps, losses = 0, 0, []
    ar = np.arange(hp["batch_size"])

    for it in range(iters + (1 if extra else 0)):
        k = n_envs if it < iters else extra
        eps = epsilon(steps, task.total_steps, hp["eps_start"], hp["eps_end"], hp["eps_decay_frac"])
        greedy = np.argmax(forward(net, online, obs), axis=1)
        explore = gen.random(n_envs) < eps
        a = np.where(explore, gen.integers(0, n_act, n_envs), greedy)
        if steps < hp["prefill"]:
            a = gen.integers(0, n_act, n_envs)
        nobs, r, term, trunc, final = venv.step(a)
        buf.add(obs[:k], a[:k], r[:k], final[:k], term[:k])
        steps += k
        obs = nobs
        if steps < hp["prefill"]:
            continue
        for _ in range(hp["grad_steps"]):
            o, act, rew, no, te = buf.sample(gen, hp["batch_size"])
            q_next_t = forward(net, target, no)
            q_next_o = forward(net, online, no) if hp["double"] else None
            y = td_target(rew, te, hp["gamma"], q_next_t, q_next_o)

            def loss_fn(p):
                q = ad.mlp(net, p, o)[ar, act]
                return ((q - y) ** 2).mean()

            val, (g,) = ad.value_and_grad(loss_fn, online)
            opt.step([g])
            losses.append(val)
            updates += 1
            if updates % hp["target_update"] == 0:
                target[:] = online
        if it % 10 == 0:
            log.record(steps, venv.episode_returns, loss=np.mean(losses) if losses else np.nan, epsilon=eps)
            venv.episode_returns.clear()
            losses = []
    check_finite(online)
    log.steps = steps
    return Policy(net, online.copy(), "argmax"), log
