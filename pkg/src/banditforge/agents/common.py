from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from banditforge.core.nets import NetworkSpec, NonFiniteError, forward
from banditforge.envs.spaces import Box


class Adam:
    """Adam over a list of flat parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float, max_grad_norm: float | None = None,
                 b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.max_grad_norm = lr, max_grad_norm
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> float:
        """Apply one update; returns the pre-clipping global gradient norm."""
        norm = math.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads))
        if not math.isfinite(norm):
            raise NonFiniteError("non-finite gradient")
        scale = 1.0
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            scale = self.max_grad_norm / (norm + 1e-6)
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        step = self.lr * math.sqrt(c2) / c1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale if scale != 1.0 else g
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= (step * m / (np.sqrt(v) + self.eps * math.sqrt(c2))).astype(p.dtype)
        return norm


def polyak(target: np.ndarray, online: np.ndarray, tau: float) -> None:
    """In place: target <- tau * target + (1 - tau) * online."""
    target *= tau
    target += (1 - tau) * online


def check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("non-finite parameters or loss")


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, act_shape: tuple, act_dtype):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), np.float32)
        self.act = np.zeros((capacity, *act_shape), act_dtype)
        self.rew = np.zeros(capacity, np.float32)
        self.term = np.zeros(capacity, np.float32)
        self.size = 0
        self._pos = 0

    def add(self, obs, act, rew, next_obs, term) -> None:
        for i in range(len(obs)):
            j = self._pos
            self.obs[j], self.act[j], self.rew[j] = obs[i], act[i], rew[i]
            self.next_obs[j], self.term[j] = next_obs[i], term[i]
            self._pos = (j + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def sample(self, gen: np.random.Generator, n: int):
        idx = gen.integers(0, self.size, n)
        return self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.term[idx]


def action_scale(space: Box) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = space.low_arr.astype(np.float32), space.high_arr.astype(np.float32)
    return (hi - lo) / 2, (hi + lo) / 2


@dataclass
class Policy:
    """Deterministic evaluation-time policy.

    ``kind`` selects how the network output becomes an action: ``argmax``
    (discrete, ties to the lowest index), ``mean`` (raw output, clipped by the
    environment) or ``tanh`` (squashed and rescaled to the action box).
    """

    net: NetworkSpec
    params: np.ndarray
    kind: str
    scale: np.ndarray | None = None
    offset: np.ndarray | None = None
    out_dim: int | None = None  # leading outputs used as the action (SAC packs log-std after)

    def __call__(self, obs):
        obs = np.asarray(obs, np.float32)
        single = obs.ndim == 1
        out = forward(self.net, self.params, obs[None] if single else obs)
        if self.out_dim is not None:
            out = out[:, : self.out_dim]
        if self.kind == "argmax":
            a = np.argmax(out, axis=1)
        elif self.kind == "mean":
            a = out
        else:
            a = np.tanh(out) * self.scale + self.offset
        return a[0] if single else a


def unused_steps_note(total: int, used: int, why: str) -> str:
    return f"{why} leaves {total - used} steps unused" if total > used else ""


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    steps: int = 0
    note: str = ""
    artifacts: dict = field(default_factory=dict)  # final networks, e.g. critics

    def record(self, step: int, returns: list[float], **losses) -> None:
        row = {"step": step, "episodic_return": float(np.mean(returns)) if returns else float("nan")}
        row.update({k: float(v) for k, v in losses.items()})
        self.rows.append(row)
