"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 200]

Prints median microseconds per call for each kernel on both backends.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from banditforge import kernels
from banditforge.core.nets import NetworkSpec, init_params
from banditforge.core.rng import Rng


def _time(fn, repeat):
    fn()  # warm-up
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples) * 1e6


def cases():
    gen = np.random.default_rng(0)
    for batch in (1, 64, 256):
        spec = NetworkSpec(4, (64, 64), 2, "tanh")
        params = init_params(spec, Rng(0))
        x = gen.standard_normal((batch, 4)).astype(np.float32)
        sizes = (4, 64, 64, 2)

        def fwd(be, params=params, x=x, sizes=sizes):
            f = kernels.get("mlp_forward", be)
            return lambda: f(sizes, kernels.TANH, params, x)

        def bwd(be, params=params, x=x, sizes=sizes, batch=batch):
            f, b = kernels.get("mlp_forward", be), kernels.get("mlp_backward", be)
            _, cache = f(sizes, kernels.TANH, params, x)
            dout = np.ones((batch, 2), np.float32)
            return lambda: b(sizes, kernels.TANH, params, cache, dout)

        yield f"mlp_forward  batch={batch}", fwd
        yield f"mlp_backward batch={batch}", bwd
    for name, shape, act in (
        ("cartpole_step", (10, 4), lambda n: gen.integers(0, 2, n)),
        ("pendulum_step", (10, 2), lambda n: gen.uniform(-2, 2, (n, 1))),
        ("acrobot_step", (10, 4), lambda n: gen.integers(0, 3, n)),
        ("mountaincar_step", (10, 2), lambda n: gen.integers(0, 3, n)),
    ):
        state = np.ascontiguousarray(gen.uniform(-0.05, 0.05, shape))
        a = act(shape[0])

        def step(be, name=name, state=state, a=a):
            f = kernels.get(name, be)
            return lambda: f(state, a)

        yield f"{name} n={shape[0]}", step


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=200)
    args = p.parse_args()
    try:
        kernels.get("mlp_forward", "compiled")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    print(f"{'kernel':<28}{'python us':>12}{'compiled us':>14}{'speedup':>10}")
    for label, make in cases():
        py = _time(make("python"), args.repeat)
        cc = _time(make("compiled"), args.repeat)
        print(f"{label:<28}{py:>12.1f}{cc:>14.1f}{py / cc:>9.1f}x")


if __name__ == "__main__":
    main()
