"""Acceptance gate: one test per criterion, summarised as PASS/FAIL lines at the end of the run.

Criteria 5 and 6 consume artifacts of long meta-training runs (hours to days
on one core).  They look under ``$BANDITFORGE_RUNS`` (default ``runs/`` in the
repository) and fail with the command to produce the artifact when it is missing.
"""

import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from banditforge import evolution
from banditforge.agents import train
from banditforge.agents.hparams import make_task
from banditforge.analysis import StateGrid, feature_importance, iqm, optimal_action_map
from banditforge.core.rng import Rng
from banditforge.envs import classic
from banditforge.envs.synthetic import ScbSpec, SyntheticEnv, init_genome, load_checkpoint
from banditforge.envs.vec import evaluate
from banditforge.meta import MetaConfig, read_history, transfer_returns
from banditforge.oracle import VARIANTS, exactness_sweep

from .gradprobes import check_probe, smooth_seeds

ROOT = Path(__file__).resolve().parents[1]
RUNS = Path(os.environ.get("BANDITFORGE_RUNS", ROOT / "runs"))


def _need(path: Path, command: str) -> Path:
    if not path.exists():
        pytest.fail(f"missing run artifact {path}; produce it with:\n    {command}", pytrace=False)
    return path


def test_criterion_1_oracle_exactness():
    reports = exactness_sweep(n_mdps=100, max_states=12, max_actions=5, variants=VARIANTS, seed=0,
                              tol=1e-8, gammas=(0.8, 0.9, 0.99))
    for r in reports:
        assert r.passed == 100 and r.failed == 0, r
        assert r.max_error <= 1e-8


def test_criterion_2_gradient_probes():
    for dtype, h, tol in ((np.float32, 1e-3, 1e-3), (np.float64, 1e-5, 1e-6)):
        seeds = smooth_seeds(100)
        errs = [check_probe(s, dtype, h) for s in seeds]
        assert len(errs) == 100 and max(errs) < tol, (dtype.__name__, max(errs))


def test_criterion_3_snes_sphere_and_invariance():
    mu0 = 5 * np.ones(10)
    norms = []

    def track(state, pop, fit):
        norms.append(float(np.linalg.norm(state.mu)))

    evolution.optimize(lambda z: -float(z @ z), 10, 1000, 32, Rng(0), mu0=mu0, callback=track)
    assert min(norms) < 0.1

    def trajectory(obj):
        mus = []
        evolution.optimize(obj, 10, 50, 32, Rng(1), mu0=mu0,
                           callback=lambda s, p, f: mus.append((s.mu.copy(), s.sigma.copy())))
        return mus

    base = trajectory(lambda z: -float(z @ z))
    for transformed in (lambda z: 7.0 - 3.0 * float(z @ z), lambda z: -float(z @ z) ** 3,
                        lambda z: float(np.exp(-float(z @ z) / 100))):
        other = trajectory(transformed)
        assert all(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) for a, b in zip(base, other))


def _ee_iqm(env_id, algo, steps, seeds, **hp):
    env = classic.make(env_id)
    scores = []
    for s in range(seeds):
        task = make_task(env_id, algo, total_steps=steps, **hp)
        pol, _ = train(task, env, Rng(s))
        scores.append(float(evaluate(env, pol, 20, None, Rng(s).fold(99)).mean()))
    return iqm(scores), scores


@pytest.mark.slow
def test_criterion_4_rl_sanity():
    ppo, ppo_scores = _ee_iqm("CartPole-v1", "ppo", 100_000, 5)
    sac, sac_scores = _ee_iqm("Pendulum-v1", "sac", 100_000, 5, lr=0.001)
    assert ppo >= 475, ppo_scores
    assert sac >= -200, sac_scores


@pytest.mark.slow
def test_criterion_5_scaled_cartpole_meta_training():
    run = RUNS / "cartpole_scaled"
    ckpt = _need(run / "best.ckpt", f"banditforge meta-train --config configs/cartpole_scaled.json --out {run}")
    spec, genome, _ = load_checkpoint(ckpt)
    cfg = MetaConfig("CartPole-v1", scb_mode=spec.mode, latent_dist=spec.latent_dist,
                     scb_hidden=spec.hidden, inner_steps=10_000)
    returns = transfer_returns(genome, cfg, 10, Rng(2024), algo="ppo", fixed=True)
    assert iqm(returns) >= 400, returns
    assert np.sum(returns > 300) >= 8, returns


@pytest.mark.slow
def test_criterion_6_mountaincar_sparse_reward_contrast():
    i_run, t_run = RUNS / "mountaincar_cb_curriculum", RUNS / "mountaincar_t"
    i_hist = read_history(_need(i_run / "history.csv",
                                f"banditforge meta-train --config configs/mountaincar_cb_curriculum.json --out {i_run}"))
    t_hist = read_history(_need(t_run / "history.csv",
                                f"banditforge meta-train --config configs/mountaincar_t.json --out {t_run}"))
    i_best = [float(r["best_fitness"]) for r in i_hist[:500]]
    assert max(i_best) > -200, f"bandit mode best return {max(i_best)} after {len(i_best)} generations"
    assert len(t_hist) >= 500, f"transition-only run has only {len(t_hist)} generations"
    assert all(float(r["best_fitness"]) == -200.0 for r in t_hist[:500])


@pytest.mark.parametrize("env_id", ["CartPole-v1", "Pendulum-v1"])
def test_criterion_7_bandit_invariants(env_id, tmp_path):
    path = os.environ.get("BANDITFORGE_CKPT")
    if path and load_checkpoint(path)[0].env_id.value == env_id:
        spec, genome, _ = load_checkpoint(path)
    else:
        spec = ScbSpec(env_id, "CB")
        genome = init_genome(spec, Rng(5))
    env = SyntheticEnv(spec, genome)
    gen = Rng(6).generator()
    n = 10_000
    obs = env.observe(env.reset_state(gen, n))
    acts = env.action_space.sample(gen, n)
    _, r, term = env.step_state(obs, acts)
    assert term.all()
    assert np.array_equal(r, env.reward(obs, acts))
    # the generic episode runner, allowed more steps than the horizon, must stop after one
    seen = []

    def policy(o):
        a = env.action_space.sample(policy_gen, len(o))
        seen.append((o.copy(), a))
        return a

    policy_gen = Rng(7).generator()
    returns = evaluate(env, policy, n, 5, Rng(8))
    assert len(seen) == 1 and len(seen[0][0]) == n
    assert np.array_equal(returns, env.reward(*seen[0]))

    box = [-1.0] * env.obs_dim, [1.0] * env.obs_dim
    scores = feature_importance(env, *box, Rng(9), n_states=64, n_actions=8, samples=16)
    assert abs(scores.sum() - 1.0) < 1e-12

    grid = StateGrid.over_box(*box, 4)
    _, a = optimal_action_map(env, grid)
    _, b = optimal_action_map(env, grid, transform=lambda x: 2.5 * x + 3.0)
    assert np.array_equal(a, b)


def test_criterion_8_worker_count_determinism(tmp_path):
    def run(workers):
        out = tmp_path / f"w{workers}"
        subprocess.run([sys.executable, "-m", "banditforge.cli", "meta-train", "--config",
                        str(ROOT / "configs" / "smoke.json"), "--seed", "3", "--out", str(out),
                        "--workers", str(workers)], check=True)
        return (out / "history.csv").read_bytes()

    assert run(1) == run(2)
