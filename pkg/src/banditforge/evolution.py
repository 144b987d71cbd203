"""Separable natural evolution strategy with rank-based fitness shaping."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from banditforge.core.rng import Rng

log = logging.getLogger(__name__)


class AllNaNWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SearchState:
    mu: np.ndarray
    sigma: np.ndarray
    generation: int = 0
    lr_mu: float = 1.0
    lr_sigma: float | None = None

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=np.float64), mu.shape).copy()
        if mu.ndim != 1:
            raise ValueError("mu must be a flat vector")
        if not np.all(sigma > 0):
            raise ValueError("sigma must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        if self.lr_sigma is None:
            d = mu.size
            object.__setattr__(self, "lr_sigma", (3 + math.log(d)) / (5 * math.sqrt(d)))

    @property
    def dim(self) -> int:
        return self.mu.size


def ask(state: SearchState, popsize: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(population, noise)``, both of shape ``(popsize, dim)``."""
    if popsize < 2:
        raise ValueError("popsize must be at least 2")
    noise = rng.generator().standard_normal((popsize, state.dim))
    return state.mu + state.sigma * noise, noise


def utility_weights(n: int) -> np.ndarray:
    """Rank utilities ordered best to worst; they sum to zero."""
    k = np.arange(1, n + 1)
    u = np.maximum(0.0, math.log(n / 2 + 1) - np.log(k))
    return u / u.sum() - 1 / n


def shape_fitness(fitness) -> np.ndarray | None:
    """Map raw fitness (higher is better) to rank utilities.

    NaN members rank below every finite member.  Members with equal fitness
    share the mean utility of the ranks they span, so a population of equal
    values gets all-zero utilities.  Returns ``None`` (with a warning) when
    every member is NaN.
    """
    f = np.asarray(fitness, dtype=np.float64)
    n = f.size
    nan = np.isnan(f)
    if nan.all():
        warnings.warn("every member has NaN fitness; skipping update", AllNaNWarning, stacklevel=2)
        return None
    key = np.where(nan, -np.inf, f)
    order = np.argsort(-key, kind="stable")
    w = utility_weights(n)
    util = np.empty(n)
    sorted_key = key[order]
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and sorted_key[stop] == sorted_key[start]:
            stop += 1
        # a tie spanning the whole population is exactly neutral
        util[order[start:stop]] = 0.0 if stop - start == n else w[start:stop].mean()
        start = stop
    return util


def tell(state: SearchState, noise: np.ndarray, utilities) -> SearchState:
    """One natural-gradient step from the stored noise and shaped utilities."""
    if utilities is None:
        return replace(state, generation=state.generation + 1)
    u = np.asarray(utilities, dtype=np.float64)
    grad_mu = u @ noise
    grad_sigma = u @ (noise * noise - 1)
    with np.errstate(over="ignore", invalid="ignore"):
        mu = state.mu + state.lr_mu * state.sigma * grad_mu
        sigma = state.sigma * np.exp(state.lr_sigma / 2 * grad_sigma)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma)) and np.all(sigma > 0)):
        log.warning("rejecting non-finite update at generation %d", state.generation)
        return replace(state, generation=state.generation + 1)
    return replace(state, mu=mu, sigma=sigma, generation=state.generation + 1)


@dataclass
class GenerationStats:
    generation: int
    best: float
    mean: float
    mean_sigma: float
    nan_count: int

    def row(self) -> list:
        return [self.generation, self.best, self.mean, self.mean_sigma, self.nan_count]


LOG_HEADER = ["generation", "best_fitness", "mean_fitness", "mean_sigma", "nan_count"]


def stats(state: SearchState, fitness) -> GenerationStats:
    f = np.asarray(fitness, dtype=np.float64)
    finite = f[~np.isnan(f)]
    return GenerationStats(
        state.generation,
        float(finite.max()) if finite.size else float("nan"),
        float(finite.mean()) if finite.size else float("nan"),
        float(state.sigma.mean()),
        int(np.isnan(f).sum()),
    )


def write_log(path, rows: list[GenerationStats]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# schema-version: 1\n")
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow(r.row())


def optimize(objective, dims: int | None = None, generations: int = 100, popsize: int = 32,
             rng: Rng | int = 0, mu0=None, sigma0=1.0, evaluate_population=None, callback=None):
    """Maximise ``objective`` with SNES; returns ``(best_x, best_f, state, history)``.

    ``evaluate_population`` may replace the per-member loop (e.g. with a
    worker pool); it receives the population and returns a fitness vector.
    ``callback(state, population, fitness)`` is called after every generation.
    """
    rng = rng if isinstance(rng, Rng) else Rng(int(rng))
    if mu0 is None:
        mu0 = np.zeros(dims)
    state = SearchState(np.asarray(mu0, dtype=np.float64), sigma0)
    best_x, best_f = state.mu.copy(), -np.inf
    history = []
    for g in range(generations):
        pop, noise = ask(state, popsize, rng.fold(g))
        if evaluate_population is not None:
            fit = np.asarray(evaluate_population(pop), dtype=np.float64)
        else:
            fit = np.array([objective(x) for x in pop], dtype=np.float64)
        finite = np.where(np.isnan(fit), -np.inf, fit)
        i = int(np.argmax(finite))
        if finite[i] > best_f:
            best_f, best_x = float(finite[i]), pop[i].copy()
        state_before = state
        state = tell(state, noise, shape_fitness(fit))
        history.append(stats(state_before, fit))
        if callback is not None:
            callback(state, pop, fit)
    return best_x, best_f, state, history
