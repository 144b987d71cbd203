"""Fixed-topology multilayer perceptrons stored as flat parameter vectors.

Layout of a parameter vector: for every layer in order, the weight matrix
(``fan_in x fan_out``, row-major) followed by its bias.  Hidden layers use the
spec's activation; the output layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from banditforge import kernels
from banditforge.core.rng import Rng

ACTIVATIONS = {"tanh": kernels.TANH, "relu": kernels.RELU, "swish": kernels.SWISH}


class ContractError(ValueError):
    """An operation was called with arguments violating its contract."""


class NonFiniteError(FloatingPointError):
    """A computation produced NaN or infinite values."""


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ContractError(f"layer sizes must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def act_code(self) -> int:
        return ACTIVATIONS[self.activation]

    @property
    def param_count(self) -> int:
        s = self.sizes
        return sum((s[i] + 1) * s[i + 1] for i in range(len(s) - 1))

    def layer_shapes(self) -> list[tuple[int, int]]:
        s = self.sizes
        return [(s[i], s[i + 1]) for i in range(len(s) - 1)]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        return cls(int(d["input_dim"]), tuple(d["hidden"]), int(d["output_dim"]), d["activation"])


def init_params(spec: NetworkSpec, rng: Rng, dtype=np.float32) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    gen = rng.generator()
    layers = []
    for fan_in, fan_out in spec.layer_shapes():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((gen.uniform(-limit, limit, (fan_in, fan_out)), np.zeros(fan_out)))
    return flatten(spec, layers).astype(dtype)


def unflatten(spec: NetworkSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    params = np.asarray(params)
    if params.ndim != 1 or params.shape[0] != spec.param_count:
        raise ContractError(
            f"expected {spec.param_count} parameters, got shape {params.shape}"
        )
    out, off = [], 0
    for fi, fo in spec.layer_shapes():
        w = params[off : off + fi * fo].reshape(fi, fo).copy()
        off += fi * fo
        out.append((w, params[off : off + fo].copy()))
        off += fo
    return out


def flatten(spec: NetworkSpec, layers) -> np.ndarray:
    shapes = spec.layer_shapes()
    if len(layers) != len(shapes):
        raise ContractError(f"expected {len(shapes)} layers, got {len(layers)}")
    parts = []
    for (w, b), (fi, fo) in zip(layers, shapes):
        w, b = np.asarray(w), np.asarray(b)
        if w.shape != (fi, fo) or b.shape != (fo,):
            raise ContractError(f"layer shape {w.shape}/{b.shape} != {(fi, fo)}/{(fo,)}")
        parts += [w.ravel(), b]
    dtype = np.result_type(*parts)
    return np.concatenate(parts).astype(dtype, copy=False)


def check_params(spec: NetworkSpec, params: np.ndarray) -> None:
    if params.ndim != 1 or params.shape[0] != spec.param_count:
        raise ContractError(
            f"parameter vector of shape {params.shape} does not match "
            f"{spec.param_count} parameters of {spec}"
        )


def forward(spec: NetworkSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the net on one input (``(input_dim,)``) or a batch (``(n, input_dim)``)."""
    params = np.asarray(params)
    check_params(spec, params)
    x = np.asarray(x, dtype=params.dtype)
    single = x.ndim == 1
    if single:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ContractError(f"input of shape {x.shape} does not match input_dim={spec.input_dim}")
    out, _ = kernels.mlp_forward(spec.sizes, spec.act_code, params, np.ascontiguousarray(x))
    return out[0] if single else out
