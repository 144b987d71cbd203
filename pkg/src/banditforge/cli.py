"""Command-line entry points.

Exit codes: 0 success, 1 other failure, 2 configuration or usage error,
3 numerical failure (every meta-training fitness was NaN), 4 oracle failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from banditforge import __version__, analysis, baselines, kernels, meta, oracle
from banditforge.agents import make_task, sample_task, train
from banditforge.core import checkpoint
from banditforge.core.nets import ContractError
from banditforge.core.rng import Rng
from banditforge.envs import classic
from banditforge.envs.synthetic import SyntheticEnv, load_checkpoint
from banditforge.envs.vec import evaluate

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NAN, EXIT_ORACLE = 0, 1, 2, 3, 4

log = logging.getLogger("banditforge")


class UsageError(Exception):
    pass


# --- run directory bookkeeping -------------------------------------------------

def _git_rev() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


class RunDir:
    """Output directory with a deterministic manifest and a separate timing/metadata file."""

    def __init__(self, path, command: str):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.started = time.time()

    def finish(self, config: dict, seed: int, artifacts: list[str]) -> None:
        manifest = {
            "command": self.command,
            "config": config,
            "seed": seed,
            "version": __version__,
            "artifacts": sorted(artifacts),
        }
        meta._atomic_write(self.path / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode())
        run_meta = {
            "started": self.started,
            "finished": time.time(),
            "git": _git_rev(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "backend": kernels.BACKEND,
            "argv": sys.argv[1:],
        }
        meta._atomic_write(self.path / "run_metadata.json", (json.dumps(run_meta, indent=2) + "\n").encode())


def _workers(value: int | None) -> int:
    if value is not None:
        n = value
    elif os.environ.get("BANDITFORGE_WORKERS"):
        try:
            n = int(os.environ["BANDITFORGE_WORKERS"])
        except ValueError:
            raise UsageError("BANDITFORGE_WORKERS must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise UsageError("worker count must be >= 1")
    return n


def _parse_override(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise UsageError(f"override {text!r} must look like key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings such as scb_mode=T
    return key.strip(), value


def load_config(path: str | None, overrides: list[str], env_id: str | None = None) -> meta.MetaConfig:
    if path is None and env_id is None:
        raise UsageError("pass --config FILE or --preset ENV")
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise UsageError(f"{path}: config must be a JSON object")
    else:
        data = meta.preset(env_id).to_dict()
    for item in overrides:
        key, value = _parse_override(item)
        data[key] = value
    return meta.MetaConfig.from_dict(data)


# --- commands -------------------------------------------------------------------

def cmd_meta_train(args) -> int:
    config = load_config(args.config, args.set, args.preset)
    run = RunDir(args.out, "meta-train")
    res = meta.meta_train(config, args.seed, run.path, workers=_workers(args.workers), resume=args.resume,
                          generations=args.generations)
    print(f"best fitness {res.best_fitness:.3f} after {res.state.generation} generations")
    run.finish(config.to_dict(), args.seed, ["history.csv", "timing.csv", "best.ckpt", "search_state.npz"])
    return EXIT_OK


def _write_curve(path: Path, rows: list[dict]) -> None:
    keys = ["step", "episodic_return"]
    for r in rows:
        keys += [k for k in r if k not in keys]
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(repr(r[k]) if k in r else "" for k in keys))
    meta._atomic_write(path, (meta.SCHEMA + "\n".join(lines) + "\n").encode())


def cmd_train(args) -> int:
    if (args.env is None) == (args.scb is None):
        raise UsageError("pass exactly one of --env or --scb")
    rng = Rng(args.seed)
    if args.scb is not None:
        spec, genome, _ = _load_scb(args.scb)
        env_id, env = spec.env_id, SyntheticEnv(spec, genome)
    else:
        env_id = classic.EnvId.parse(args.env)
        env = classic.make(env_id)
    if args.hp == "fixed":
        task = make_task(env_id, args.algo, total_steps=args.steps)
    else:
        task = sample_task(env_id, rng.fold(0), algo=args.algo, total_steps=args.steps)
    policy, tlog = train(task, env, rng.fold(1))
    returns = evaluate(classic.make(env_id), policy, args.episodes, None, rng.fold(2))
    run = RunDir(args.out, "train")
    _write_curve(run.path / "curve.csv", tlog.rows)
    rows = "".join(f"{i},{r!r}\n" for i, r in enumerate(returns.tolist()))
    meta._atomic_write(run.path / "evaluation.csv", (meta.SCHEMA + "episode,return\n" + rows).encode())
    print(f"{env_id.value} {args.algo}: mean EE return {returns.mean():.2f} over {args.episodes} episodes")
    if tlog.note:
        print(tlog.note)
    config = {"env": env_id.value, "scb": args.scb, "task": task.to_dict(), "episodes": args.episodes}
    run.finish(config, args.seed, ["curve.csv", "evaluation.csv"])
    return EXIT_OK


def _load_scb(path):
    try:
        return load_checkpoint(path)
    except (OSError, checkpoint.CheckpointError) as exc:
        raise UsageError(f"cannot load synthetic environment: {exc}") from None


def cmd_analyze(args) -> int:
    spec, genome, _ = _load_scb(args.scb)
    env = SyntheticEnv(spec, genome)
    if spec.mode != "CB":
        raise UsageError(f"--what {args.what} needs a bandit-mode checkpoint, got mode {spec.mode}")
    ee = classic.make(spec.env_id)
    run = RunDir(args.out, "analyze")
    rng = Rng(args.seed)
    if args.what == "action-map":
        grid = analysis.StateGrid.parse(args.grid) if args.grid else \
            analysis.StateGrid.over_box(ee.obs_low, ee.obs_high, args.resolution)
        states, actions = analysis.optimal_action_map(env, grid)
        analysis.write_action_map(run.path / "action_map.csv", states, actions)
        name = "action_map.csv"
    elif args.what == "importance":
        scores = analysis.feature_importance(env, ee.obs_low, ee.obs_high, rng)
        analysis.write_importance(run.path / "importance.csv", scores)
        print(" ".join(f"{s:.3f}" for s in scores))
        name = "importance.csv"
    else:
        returns = evaluate(ee, analysis.cb_optimal_policy(env), args.episodes, None, rng)
        rows = "".join(f"{i},{r!r}\n" for i, r in enumerate(returns.tolist()))
        meta._atomic_write(run.path / "cb_optimal.csv", (meta.SCHEMA + "episode,return\n" + rows).encode())
        print(f"greedy-on-reward policy: mean EE return {returns.mean():.2f}")
        name = "cb_optimal.csv"
    run.finish({"scb": str(args.scb), "what": args.what, "grid": args.grid}, args.seed, [name])
    return EXIT_OK


def cmd_oracle(args) -> int:
    variants = oracle.VARIANTS if args.variant == "all" else (args.variant,)
    if args.n_mdps < 1 or args.max_states < 1 or args.max_actions < 1:
        raise UsageError("--n-mdps, --max-states and --max-actions must be >= 1")
    reports = oracle.exactness_sweep(args.n_mdps, args.max_states, args.max_actions, variants, args.seed, args.tol)
    for r in reports:
        print(f"{r.variant}: {r.passed} passed, {r.failed} failed, max |V - V*| = {r.max_error:.3g}")
    return EXIT_OK if all(r.ok for r in reports) else EXIT_ORACLE


def cmd_baseline(args) -> int:
    env_id = classic.EnvId.parse(args.env)
    cells = baselines.parse_cells(args.cells)
    rng = Rng(args.seed)
    run = RunDir(args.out, "baseline")
    scb = None
    if args.scb is not None:
        spec, genome, _ = _load_scb(args.scb)
        scb = (spec, genome)
    artifacts = ["suite.csv"]
    if args.expert is not None:
        try:
            expert = baselines.ExpertBundle.load(args.expert)
        except (OSError, checkpoint.CheckpointError) as exc:
            raise UsageError(f"cannot load expert: {exc}") from None
    else:
        expert = baselines.train_expert(env_id, rng.fold(0), args.expert_steps)
        expert.save(run.path / "expert.ckpt")
        artifacts.append("expert.ckpt")
    print(f"expert IQM {expert.score:.1f} ({expert.grade}-grade)")
    algos = args.algos.split(",") if args.algos else None
    rows = baselines.baseline_suite(env_id, scb, expert, cells, runs=args.runs, steps=args.budget,
                                    algos=algos, rng=rng.fold(1))
    baselines.write_suite(run.path / "suite.csv", rows)
    for r in rows:
        print(f"{r.reward_kind:>16} {r.init_kind:>14} {r.algo:>5}  {r.iqm:7.3f} [{r.ci_low:.3f}, {r.ci_high:.3f}]")
    config = {"env": env_id.value, "scb": args.scb, "expert": args.expert, "cells": args.cells,
              "budget": args.budget, "runs": args.runs, "algos": algos, "expert_grade": expert.grade}
    run.finish(config, args.seed, artifacts)
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="banditforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("meta-train", help="evolve a synthetic environment")
    src = m.add_mutually_exclusive_group()
    src.add_argument("--config", help="JSON config file")
    src.add_argument("--preset", metavar="ENV", help="built-in desk-scale config for ENV")
    m.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.add_argument("--workers", type=int, help="worker processes (default: $BANDITFORGE_WORKERS or all cores)")
    m.add_argument("--resume", action="store_true", help="continue from search_state.npz in --out")
    m.add_argument("--generations", type=int, help="stop after this many generations")
    m.set_defaults(fn=cmd_meta_train)

    t = sub.add_parser("train", help="train one agent in an evaluation or synthetic environment")
    t.add_argument("--env")
    t.add_argument("--scb", help="synthetic environment checkpoint")
    t.add_argument("--algo", required=True, choices=("ppo", "sac", "dqn", "ddpg", "td3"))
    t.add_argument("--hp", choices=("fixed", "sampled"), default="fixed")
    t.add_argument("--steps", type=int, default=10_000)
    t.add_argument("--episodes", type=int, default=50, help="evaluation episodes")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    a = sub.add_parser("analyze", help="probe a bandit-mode synthetic environment")
    a.add_argument("--scb", required=True)
    a.add_argument("--what", required=True, choices=("action-map", "importance", "cb-optimal"))
    a.add_argument("--grid", help="lo:hi:n per observation dim; a bare number fixes that dim")
    a.add_argument("--resolution", type=int, default=11, help="points per dim when --grid is omitted")
    a.add_argument("--episodes", type=int, default=50)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_analyze)

    o = sub.add_parser("oracle", help="check the MDP-to-bandit reduction on random tabular MDPs")
    o.add_argument("--n-mdps", type=int, default=100)
    o.add_argument("--max-states", type=int, default=12)
    o.add_argument("--max-actions", type=int, default=5)
    o.add_argument("--variant", choices=("all", *oracle.VARIANTS), default="all")
    o.add_argument("--tol", type=float, default=1e-8)
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(fn=cmd_oracle)

    b = sub.add_parser("baseline", help="component-replacement baselines against an expert")
    b.add_argument("--env", required=True)
    b.add_argument("--scb", help="bandit-mode checkpoint for the synthetic components")
    b.add_argument("--expert", help="saved expert; trained on the fly when omitted")
    b.add_argument("--expert-steps", type=int, help="SAC budget for an on-the-fly expert")
    b.add_argument("--cells", default="all", help="reward/init pairs, comma separated, or 'all'")
    b.add_argument("--budget", type=int, default=10_000, help="agent training steps per run")
    b.add_argument("--runs", type=int, default=5)
    b.add_argument("--algos", help="comma-separated subset of agents")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_baseline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except meta.AllNaNError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NAN
    except baselines.ExpertError as exc:
        print(f"expert training failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except KeyboardInterrupt:
        print("interrupted; search_state.npz and best.ckpt hold the last completed generation", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
