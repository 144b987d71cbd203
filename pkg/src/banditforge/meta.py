"""Bi-level meta-training of synthetic environments.

Outer loop: SNES over the flat synthetic-environment genome.  Inner loop: for
every population member, train RL agents inside the synthetic environment,
freeze them and score them in the real evaluation environment.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from banditforge import evolution
from banditforge.agents import algos_for, sample_task, train
from banditforge.core.nets import ContractError, NonFiniteError
from banditforge.core.rng import Rng, as_rng
from banditforge.envs import classic
from banditforge.envs.classic import EnvId
from banditforge.envs.synthetic import ScbSpec, SyntheticEnv, init_genome, save_checkpoint
from banditforge.envs.vec import evaluate

log = logging.getLogger(__name__)

SCHEMA = "# schema-version: 1\n"
HISTORY_HEADER = [
    "generation",
    "eval_length",
    "best_fitness",
    "mean_fitness",
    "nan_count",
    "mean_sigma",
    "inner_steps",
    "pop_mean_fitness",
]


class AllNaNError(FloatingPointError):
    """Every fitness evaluation of a meta-training run was NaN."""


@dataclass(frozen=True)
class Curriculum:
    kind: str = "none"
    init_len: int = 1
    final_len: int = 1
    begin_gen: int = 0
    transition_gens: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("none", "linear"):
            raise ContractError(f"unknown curriculum kind {self.kind!r}")
        if self.kind == "linear" and (self.init_len < 1 or self.final_len < 1 or self.transition_gens < 1):
            raise ContractError("curriculum lengths and transition_gens must be >= 1")


MOUNTAINCAR_CURRICULUM = Curriculum("linear", 1000, 200, 200, 600)


def eval_length(curriculum: Curriculum, generation: int, horizon: int) -> int:
    if generation < 0:
        raise ContractError("generation must be >= 0")
    if curriculum.kind == "none":
        return horizon
    c = curriculum
    frac = min(1.0, max(0.0, (generation - c.begin_gen) / c.transition_gens))
    return int(round(c.init_len + frac * (c.final_len - c.init_len)))


@dataclass(frozen=True)
class MetaConfig:
    env_id: str
    popsize: int = 64
    generations: int = 150
    num_rollouts: int = 1
    eval_seeds: int = 50
    eval_seeds_population_mean: int = 64
    multi_algo_mode: str = "all"
    hp_sampling: str = "sampled"
    scb_mode: str = "CB"
    latent_dist: str = "gaussian"
    scb_hidden: tuple[int, ...] = (32,)
    curriculum: Curriculum = field(default_factory=Curriculum)
    sigma0: float = 0.05
    inner_steps: int = 10_000
    pop_mean_every: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "env_id", EnvId.parse(self.env_id).value)
        object.__setattr__(self, "scb_hidden", tuple(self.scb_hidden))
        if isinstance(self.curriculum, dict):
            object.__setattr__(self, "curriculum", Curriculum(**self.curriculum))
        if self.multi_algo_mode not in ("all", "sequential"):
            raise ContractError(f"multi_algo_mode must be 'all' or 'sequential', not {self.multi_algo_mode!r}")
        if self.hp_sampling not in ("fixed", "sampled"):
            raise ContractError(f"hp_sampling must be 'fixed' or 'sampled', not {self.hp_sampling!r}")
        for name in ("popsize", "generations", "num_rollouts", "eval_seeds", "eval_seeds_population_mean",
                     "inner_steps", "pop_mean_every"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.popsize < 2:
            raise ContractError("popsize must be >= 2")
        if self.sigma0 <= 0:
            raise ContractError("sigma0 must be positive")
        self.scb_spec  # validates mode and latent

    @property
    def scb_spec(self) -> ScbSpec:
        return ScbSpec(self.env_id, self.scb_mode, self.latent_dist, self.scb_hidden)

    @property
    def algos(self) -> tuple[str, ...]:
        return algos_for(classic.make(self.env_id).action_space)

    def algos_at(self, generation: int) -> tuple[str, ...]:
        if self.multi_algo_mode == "all":
            return self.algos
        return (self.algos[generation % len(self.algos)],)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scb_hidden"] = list(self.scb_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> MetaConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config fields {sorted(unknown)}")
        if "env_id" not in d:
            raise ContractError("config is missing the 'env_id' field")
        return cls(**d)


def preset(env_id: str, **overrides) -> MetaConfig:
    """Desk-scale defaults: half the population and generations of the full setup."""
    env_id = EnvId.parse(env_id)
    gens = {
        EnvId.AcrobotV1: 300,
        EnvId.CartPoleV1: 300,
        EnvId.MountainCarV0: 1000,
        EnvId.ContinuousMountainCarV0: 300,
        EnvId.PendulumV1: 1000,
    }[env_id]
    base = dict(env_id=env_id.value, popsize=64, generations=gens // 2, num_rollouts=1)
    if env_id is EnvId.PendulumV1:
        base.update(popsize=32, num_rollouts=8)
    if env_id is EnvId.MountainCarV0:
        base["curriculum"] = MOUNTAINCAR_CURRICULUM
    base.update(overrides)
    return MetaConfig(**base)


# --- fitness ------------------------------------------------------------------

def train_agents(genome: np.ndarray, config: MetaConfig, generation: int, rng: Rng):
    """Train the generation's agents in the synthetic env; returns ``(policies, steps)``."""
    env = SyntheticEnv(config.scb_spec, genome)
    policies, steps = [], 0
    for algo in config.algos_at(generation):
        a_idx = config.algos.index(algo)
        for r in range(config.num_rollouts):
            task_rng = rng.fold(a_idx, r)
            task = sample_task(config.env_id, task_rng.fold(0), fixed=config.hp_sampling == "fixed",
                               algo=algo, total_steps=config.inner_steps)
            policy, tlog = train(task, env, task_rng.fold(1))
            policies.append(policy)
            steps += tlog.steps
    return policies, steps


def fitness(genome: np.ndarray, config: MetaConfig, generation: int, rng: Rng,
            eval_rng: Rng | None = None, eval_episodes: int | None = None) -> tuple[float, int]:
    """Mean evaluation-environment return of agents trained in ``genome``.

    Returns ``(fitness, inner_steps)``; fitness is NaN when the synthetic
    environment or an agent produced non-finite numbers.
    """
    ee = classic.make(config.env_id)
    length = eval_length(config.curriculum, generation, ee.horizon)
    eval_rng = rng.fold(99) if eval_rng is None else eval_rng
    n_ep = config.eval_seeds if eval_episodes is None else eval_episodes
    try:
        with np.errstate(all="ignore"):
            policies, steps = train_agents(np.asarray(genome, np.float32), config, generation, rng)
    except FloatingPointError:
        return float("nan"), 0
    returns = [evaluate(ee, p, n_ep, length, eval_rng).mean() for p in policies]
    return float(np.mean(returns)), steps


def _member_job(args):
    genome, config_dict, generation, rng, eval_rng, n_ep = args
    return fitness(genome, MetaConfig.from_dict(config_dict), generation, rng, eval_rng, n_ep)


# --- training loop ----------------------------------------------------------

def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    buf.write(SCHEMA)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


@dataclass
class MetaResult:
    best_genome: np.ndarray
    best_fitness: float
    state: evolution.SearchState
    history: list[list]
    config: MetaConfig


def _save_state(path: Path, state, best_genome, best_fitness, history, seed) -> None:
    buf = io.BytesIO()
    np.savez(
        buf,
        mu=state.mu,
        sigma=state.sigma,
        generation=state.generation,
        lr=np.array([state.lr_mu, state.lr_sigma]),
        best_genome=best_genome,
        best_fitness=best_fitness,
        history=json.dumps(history),
        seed=seed,
    )
    _atomic_write(path, buf.getvalue())


def _load_state(path: Path):
    with np.load(path) as z:
        state = evolution.SearchState(z["mu"], z["sigma"], int(z["generation"]), *map(float, z["lr"]))
        return state, z["best_genome"], float(z["best_fitness"]), json.loads(str(z["history"])), int(z["seed"])


def meta_train(config: MetaConfig, seed: int | Rng = 0, out_dir: str | os.PathLike | None = None,
               workers: int = 1, resume: bool = False, generations: int | None = None) -> MetaResult:
    """Run meta-training; optionally persist logs, checkpoints and resumable state in ``out_dir``.

    ``generations`` stops early (for interruption tests) without changing the
    schedule, which is fixed by the config.
    """
    rng = as_rng(seed)
    spec = config.scb_spec
    ee = classic.make(config.env_id)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    state_path = out / "search_state.npz" if out is not None else None

    if resume and state_path is not None and state_path.exists():
        state, best_genome, best_f, history, stored_seed = _load_state(state_path)
        if stored_seed != rng.seed:
            raise ContractError(f"resume seed {rng.seed} differs from stored seed {stored_seed}")
    else:
        mu0 = init_genome(spec, rng.fold(0)).astype(np.float64)
        state = evolution.SearchState(mu0, config.sigma0)
        best_genome, best_f, history = mu0.astype(np.float32), -np.inf, []
    timing = []
    stop = config.generations if generations is None else min(config.generations, generations)
    pool = None
    if workers > 1:
        pool = ProcessPoolExecutor(workers, mp_context=get_context("fork"))
    cfg = config.to_dict()
    try:
        while state.generation < stop:
            g = state.generation
            t0 = time.perf_counter()
            length = eval_length(config.curriculum, g, ee.horizon)
            pop, noise = evolution.ask(state, config.popsize, rng.fold(1, g))
            eval_rng = rng.fold(3, g)
            jobs = [(pop[i].astype(np.float32), cfg, g, rng.fold(2, g, i), eval_rng, None)
                    for i in range(config.popsize)]
            pop_mean = ""
            if g % config.pop_mean_every == 0:
                jobs.append((state.mu.astype(np.float32), cfg, g, rng.fold(4, g), rng.fold(5, g),
                             config.eval_seeds_population_mean))
            results = list(pool.map(_member_job, jobs)) if pool else [_member_job(j) for j in jobs]
            if g % config.pop_mean_every == 0:
                pop_mean = results.pop()[0]
            fit = np.array([r[0] for r in results])
            steps = sum(r[1] for r in results)
            finite = np.where(np.isnan(fit), -np.inf, fit)
            i = int(np.argmax(finite))
            if finite[i] > best_f:
                best_f, best_genome = float(finite[i]), pop[i].astype(np.float32)
                if out is not None:
                    save_checkpoint(out / "best.ckpt", spec, best_genome, generation=g, seed=rng.seed,
                                    fitness=best_f, config=cfg)
            st = evolution.stats(state, fit)
            history.append([g, length, st.best, st.mean, st.nan_count, st.mean_sigma, steps, pop_mean])
            state = evolution.tell(state, noise, evolution.shape_fitness(fit))
            timing.append([g, time.perf_counter() - t0])
            log.info("gen %d len %d best %.3f mean %.3f nan %d", g, length, st.best, st.mean, st.nan_count)
            if out is not None:
                _save_state(state_path, state, best_genome, best_f, history, rng.seed)
                _atomic_write(out / "history.csv", _csv_bytes(HISTORY_HEADER, [[_fmt(v) for v in r] for r in history]))
                _append_timing(out / "timing.csv", timing[-1:])
    finally:
        if pool is not None:
            pool.shutdown()
    if not np.isfinite(best_f):
        raise AllNaNError("no population member produced a finite fitness")
    return MetaResult(best_genome, best_f, state, history, config)


def _append_timing(path: Path, rows) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as f:
        if new:
            f.write(SCHEMA)
            f.write("generation,wall_seconds\n")
        for g, s in rows:
            f.write(f"{g},{s:.3f}\n")


def read_history(path) -> list[dict]:
    with open(path) as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# --- ablations ----------------------------------------------------------------

def variant_config(base: MetaConfig, variant: str) -> MetaConfig:
    """Apply an ablation variant: ``T``, ``TI``, ``I``, ``IC`` or ``latent:<kind>``."""
    if variant.startswith("latent:"):
        return replace(base, latent_dist=variant.split(":", 1)[1])
    curriculum = MOUNTAINCAR_CURRICULUM if EnvId.parse(base.env_id) is EnvId.MountainCarV0 else base.curriculum
    table = {
        "T": dict(scb_mode="T", curriculum=Curriculum()),
        "TI": dict(scb_mode="TI", curriculum=Curriculum()),
        "I": dict(scb_mode="CB", curriculum=Curriculum()),
        "IC": dict(scb_mode="CB", curriculum=curriculum),
    }
    if variant not in table:
        raise ContractError(f"unknown ablation variant {variant!r}")
    return replace(base, **table[variant])


def transfer_returns(genome, config: MetaConfig, runs: int, rng: Rng, algo: str = "ppo",
                     fixed: bool = True, episodes: int = 50) -> np.ndarray:
    """EE returns of ``runs`` fresh agents trained in ``genome`` (one mean return per run)."""
    ee = classic.make(config.env_id)
    env = SyntheticEnv(config.scb_spec, genome)
    out = []
    for k in range(runs):
        task = sample_task(config.env_id, rng.fold(k, 0), fixed=fixed, algo=algo, total_steps=config.inner_steps)
        try:
            with np.errstate(all="ignore"):
                pol, _ = train(task, env, rng.fold(k, 1))
        except FloatingPointError:
            out.append(float("nan"))
            continue
        out.append(float(evaluate(ee, pol, episodes, None, rng.fold(k, 2)).mean()))
    return np.array(out)


def ablation_suite(env_id: str, variants, rng: Rng | int = 0, base: MetaConfig | None = None,
                   runs: int = 10, workers: int = 1, out_dir=None):
    """Meta-train every variant with a shared budget and compare final transfer performance.

    Returns rows ``(variant, iqm, ci_low, ci_high, n)``.
    """
    from banditforge.analysis import iqm_ci

    rng = as_rng(rng)
    base = base or preset(env_id)
    rows = []
    for k, v in enumerate(variants):
        cfg = variant_config(base, v)
        sub = Path(out_dir) / v.replace(":", "_") if out_dir is not None else None
        try:
            res = meta_train(cfg, rng.fold(k), sub, workers=workers)
            samples = transfer_returns(res.best_genome, cfg, runs, rng.fold(k, 1))
        except AllNaNError:
            samples = np.full(runs, np.nan)
        finite = samples[np.isfinite(samples)]
        if finite.size:
            rep = iqm_ci(finite, 1000, rng.fold(k, 2))
            rows.append((v, rep.iqm, rep.ci_low, rep.ci_high, int(finite.size)))
        else:
            rows.append((v, float("nan"), float("nan"), float("nan"), 0))
    return rows
