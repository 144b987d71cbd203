"""Backend selection for the hot kernels.

The compiled extension (``banditforge._kernels``) is used when it was built;
otherwise the numpy fallback is used.  Set ``BANDITFORGE_BACKEND=python`` to
force the fallback.
"""

from __future__ import annotations

import os

from banditforge import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("BANDITFORGE_BACKEND", "").lower() not in ("python", "numpy", "fallback"):
    try:
        from banditforge import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

TANH, RELU, SWISH = _fallback.TANH, _fallback.RELU, _fallback.SWISH

mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
cartpole_step = _impl.cartpole_step
mountaincar_step = _impl.mountaincar_step
continuous_mountaincar_step = _impl.continuous_mountaincar_step
pendulum_step = _impl.pendulum_step
acrobot_step = _impl.acrobot_step


def get(name: str, backend: str | None = None):
    """Look up a kernel on a specific backend (used by tests and benchmarks)."""
    if backend in (None, BACKEND):
        return getattr(_impl, name)
    if backend == "python":
        return getattr(_fallback, name)
    from banditforge import _kernels

    return getattr(_kernels, name)
