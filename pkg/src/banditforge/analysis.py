"""Interpretability probes for bandit-mode synthetic environments and result statistics."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from banditforge.core.nets import ContractError
from banditforge.core.rng import Rng, as_rng
from banditforge.envs.spaces import Box, Discrete
from banditforge.envs.synthetic import SyntheticEnv


class ZeroVarianceWarning(RuntimeWarning):
    pass


# --- reward access ------------------------------------------------------------

class RewardModel:
    """Reward ``R(s, a)`` of a bandit-mode synthetic env, batched over rows.

    ``transform`` (applied to the reward) exists for invariance checks.
    """

    def __init__(self, env: SyntheticEnv, transform=None):
        if env.spec.mode != "CB":
            raise ContractError("reward probes need a contextual-bandit (CB) environment")
        self.env = env
        self.space = env.action_space
        self.transform = transform

    def __call__(self, obs: np.ndarray, action) -> np.ndarray:
        r = self.env.reward(np.asarray(obs, np.float32), action)
        return r if self.transform is None else self.transform(r)


# --- optimal actions ----------------------------------------------------------

def _discrete_argmax(model: RewardModel, obs: np.ndarray) -> np.ndarray:
    n = len(obs)
    vals = np.stack([model(obs, np.full(n, k)) for k in range(model.space.n)], axis=1)
    return np.argmax(vals, axis=1)


def _continuous_argmax(model: RewardModel, obs: np.ndarray, grid: int = 64, starts: int = 4,
                       rounds: int = 5, points: int = 33) -> np.ndarray:
    """Grid search, then repeated bracket zooming around the best ``starts`` candidates."""
    space: Box = model.space
    if space.shape[0] != 1:
        raise ContractError("continuous argmax supports one-dimensional action boxes")
    lo, hi = float(space.low[0]), float(space.high[0])
    n = len(obs)
    cand = np.linspace(lo, hi, grid)
    vals = np.stack([model(obs, np.full((n, 1), c, np.float32)) for c in cand], axis=1)
    top = np.argsort(-vals, axis=1, kind="stable")[:, :starts]
    centre = cand[top].reshape(-1)  # [n * starts]
    best_r = np.take_along_axis(vals, top, axis=1).reshape(-1)
    rep = np.repeat(obs, starts, axis=0)
    half = (hi - lo) / (grid - 1)
    offsets = np.linspace(-1.0, 1.0, points)
    for _ in range(rounds):
        a = np.clip(centre[:, None] + half * offsets[None, :], lo, hi)
        r = np.stack([model(rep, a[:, k : k + 1].astype(np.float32)) for k in range(points)], axis=1)
        k = np.argmax(r, axis=1)
        better = r[np.arange(len(a)), k] > best_r
        centre = np.where(better, a[np.arange(len(a)), k], centre)
        best_r = np.where(better, r[np.arange(len(a)), k], best_r)
        half *= 2.0 / (points - 1)
    pick = np.argmax(best_r.reshape(n, starts), axis=1)
    return centre.reshape(n, starts)[np.arange(n), pick][:, None].astype(np.float32)


def best_actions(model: RewardModel, obs: np.ndarray) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, np.float32))
    if isinstance(model.space, Discrete):
        return _discrete_argmax(model, obs)
    return _continuous_argmax(model, obs)


@dataclass(frozen=True)
class StateGrid:
    low: tuple[float, ...]
    high: tuple[float, ...]
    resolution: tuple[int, ...]  # 1 means "fixed at the value in ``fixed``"
    fixed: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        d = len(self.low)
        if not (len(self.high) == len(self.resolution) == d):
            raise ContractError("grid ranges and resolutions must have equal length")
        if any(r < 1 for r in self.resolution):
            raise ContractError("resolutions must be >= 1")
        if not any(r >= 2 for r in self.resolution):
            raise ContractError("at least one dimension must be swept with resolution >= 2")

    def points(self) -> np.ndarray:
        fixed = self.fixed or tuple((lo + hi) / 2 for lo, hi in zip(self.low, self.high))
        axes = [
            np.linspace(lo, hi, r) if r >= 2 else np.array([f])
            for lo, hi, r, f in zip(self.low, self.high, self.resolution, fixed)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1).astype(np.float32)

    @classmethod
    def parse(cls, text: str) -> StateGrid:
        """``lo:hi:n,lo:hi:n,...``; a dimension written as a single number is fixed."""
        low, high, res, fixed = [], [], [], []
        try:
            for part in text.split(","):
                bits = part.strip().split(":")
                if len(bits) == 1:
                    v = float(bits[0])
                    low.append(v), high.append(v), res.append(1), fixed.append(v)
                elif len(bits) == 3:
                    lo, hi, n = float(bits[0]), float(bits[1]), int(bits[2])
                    low.append(lo), high.append(hi), res.append(n), fixed.append((lo + hi) / 2)
                else:
                    raise ValueError(part)
        except ValueError as exc:
            raise ContractError(f"cannot parse grid spec {text!r}: {exc}") from None
        return cls(tuple(low), tuple(high), tuple(res), tuple(fixed))

    @classmethod
    def over_box(cls, low, high, resolution: int = 11) -> StateGrid:
        return cls(tuple(low), tuple(high), (resolution,) * len(low))


def optimal_action_map(env: SyntheticEnv, grid: StateGrid, transform=None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(states, actions)`` with the reward-maximising action per grid state."""
    model = RewardModel(env, transform)
    pts = grid.points()
    if pts.shape[1] != env.obs_dim:
        raise ContractError(f"grid has {pts.shape[1]} dims, environment observes {env.obs_dim}")
    return pts, best_actions(model, pts)


def cb_optimal_policy(env: SyntheticEnv):
    """Policy acting greedily on the synthetic reward; needs no training."""
    model = RewardModel(env)

    def policy(obs):
        obs = np.asarray(obs, np.float32)
        single = obs.ndim == 1
        a = best_actions(model, obs[None] if single else obs)
        return a[0] if single else a

    return policy


# --- feature importance -------------------------------------------------------

def feature_importance(env: SyntheticEnv, low, high, rng: Rng | int = 0, n_states: int = 256,
                       n_actions: int = 16, samples: int = 64) -> np.ndarray:
    """Average reward variance when sweeping one observation entry, normalised to sum 1.

    Probe states are uniform over the box ``[low, high]``; probe actions are
    uniform over the action space.  Each probe pair is combined with
    ``samples`` evenly spaced values of the swept entry.
    """
    if samples < 2:
        raise ContractError("samples must be >= 2")
    model = RewardModel(env)
    gen = as_rng(rng).generator()
    low, high = np.asarray(low, np.float64), np.asarray(high, np.float64)
    d = env.obs_dim
    states = gen.uniform(low, high, (n_states, d)).astype(np.float32)
    actions = env.action_space.sample(gen, n_actions)
    if isinstance(env.action_space, Box):
        actions = actions.astype(np.float32)
    # every (state, action) probe pair
    s_rep = np.repeat(states, n_actions, axis=0)
    a_rep = np.tile(actions, (n_states, 1)) if actions.ndim == 2 else np.tile(actions, n_states)
    score = np.zeros(d)
    for j in range(d):
        sweep = np.linspace(low[j], high[j], samples, dtype=np.float32)
        x = np.repeat(s_rep, samples, axis=0)
        x[:, j] = np.tile(sweep, len(s_rep))
        a = np.repeat(a_rep, samples, axis=0)
        r = model(x, a).reshape(len(s_rep), samples)
        score[j] = r.var(axis=1).mean()
    total = score.sum()
    if not total > 0:
        warnings.warn("reward does not vary with any observation entry", ZeroVarianceWarning, stacklevel=2)
        return np.full(d, 1.0 / d)
    return score / total


# --- metrics ----------------------------------------------------------------------

def normalized_performance(returns, random_ref: float, expert_ref: float) -> np.ndarray:
    """(R - R_random) / (R_expert - R_random): 0 for random play, 1 for the expert."""
    if not np.isfinite(random_ref) or not np.isfinite(expert_ref) or expert_ref == random_ref:
        raise ContractError("expert and random references must be finite and distinct")
    return (np.asarray(returns, np.float64) - random_ref) / (expert_ref - random_ref)


@dataclass(frozen=True)
class MetricReport:
    iqm: float
    ci_low: float
    ci_high: float
    samples: tuple[float, ...]


def iqm(samples) -> float:
    return float(stats.trim_mean(np.asarray(samples, np.float64), 0.25))


def iqm_ci(samples, bootstrap_iters: int = 2000, rng: Rng | int = 0, level: float = 0.95) -> MetricReport:
    """Interquartile mean with a percentile-bootstrap confidence interval."""
    x = np.asarray(samples, np.float64)
    if x.size < 2:
        raise ContractError("need at least two samples")
    point = iqm(x)
    gen = as_rng(rng).generator()
    idx = gen.integers(0, x.size, (bootstrap_iters, x.size))
    boots = stats.trim_mean(x[idx], 0.25, axis=1)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(boots, [alpha, 1 - alpha])
    # the percentile interval can miss the point estimate on tiny samples
    lo, hi = min(lo, point), max(hi, point)
    return MetricReport(point, float(lo), float(hi), tuple(x.tolist()))


# --- CSV output ---------------------------------------------------------------

def _writer(path, header):
    fh = open(path, "w", newline="")
    fh.write("# schema-version: 1\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    return fh, w


def write_action_map(path, states: np.ndarray, actions: np.ndarray) -> None:
    acts = actions.reshape(len(states), -1)
    header = [f"s{j}" for j in range(states.shape[1])] + [f"a{k}" for k in range(acts.shape[1])]
    fh, w = _writer(path, header)
    with fh:
        for s, a in zip(states, acts):
            w.writerow([repr(float(v)) for v in s] + [repr(v.item()) for v in a])


def write_importance(path, scores: np.ndarray) -> None:
    fh, w = _writer(path, ["dim", "score"])
    with fh:
        for j, v in enumerate(scores):
            w.writerow([j, repr(float(v))])
