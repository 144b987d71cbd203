"""Synthetic environments parameterised by small neural networks.

In ``CB`` mode an episode is a single step: a latent vector ``z`` is mapped to
an observation by the init net, the agent acts once and the reward net scores
the (observation, action) pair.  ``T`` and ``TI`` modes add a transition net
producing ``(next_obs, reward, done_logit)``; ``T`` starts episodes from the
evaluation environment's own initial-state distribution, ``TI`` from the init
net.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from banditforge.core import checkpoint
from banditforge.core.nets import ContractError, NetworkSpec, NonFiniteError, check_params, forward, init_params
from banditforge.core.rng import Rng
from banditforge.envs import classic
from banditforge.envs.classic import EnvId
from banditforge.envs.spaces import Box, Discrete

LATENTS = ("gaussian", "uniform01", "categorical_uniform", "categorical_softmax")
MODES = ("CB", "T", "TI")
FORMAT_TAG = "scb-v1"

# the ablation letter for the bandit parameterisation is "I"
_MODE_ALIASES = {"I": "CB", "IC": "CB"}


@dataclass(frozen=True)
class ScbSpec:
    env_id: EnvId
    mode: str = "CB"
    latent_dist: str = "gaussian"
    hidden: tuple[int, ...] = (32,)
    activation: str = "tanh"
    latent_dim: int = 0  # 0 means the evaluation env's observation size
    max_episode_len: int = 0  # 0 means 1 for CB, else the evaluation env's horizon

    def __post_init__(self) -> None:
        object.__setattr__(self, "env_id", EnvId.parse(self.env_id))
        mode = _MODE_ALIASES.get(self.mode, self.mode)
        if mode not in MODES:
            raise ContractError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        object.__setattr__(self, "mode", mode)
        if self.latent_dist not in LATENTS:
            raise ContractError(f"unknown latent distribution {self.latent_dist!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        ee = classic.make(self.env_id)
        if self.latent_dim == 0:
            object.__setattr__(self, "latent_dim", ee.obs_dim)
        if self.max_episode_len == 0:
            object.__setattr__(self, "max_episode_len", 1 if mode == "CB" else ee.horizon)
        if mode == "CB" and self.max_episode_len != 1:
            raise ContractError("contextual bandits have episodes of length 1")
        if self.latent_dim < 1 or self.max_episode_len < 1:
            raise ContractError("latent_dim and max_episode_len must be positive")

    @property
    def ee(self) -> classic.ClassicEnv:
        return classic.make(self.env_id)

    @property
    def obs_dim(self) -> int:
        return self.ee.obs_dim

    @property
    def action_space(self) -> Discrete | Box:
        return self.ee.action_space

    @property
    def has_init_net(self) -> bool:
        return self.mode in ("CB", "TI")

    @property
    def init_net(self) -> NetworkSpec | None:
        if not self.has_init_net:
            return None
        return NetworkSpec(self.latent_dim, self.hidden, self.obs_dim, self.activation)

    @property
    def core_net(self) -> NetworkSpec:
        """Reward net (CB) or transition net (T/TI)."""
        n_in = self.obs_dim + self.action_space.encoding_dim
        n_out = 1 if self.mode == "CB" else self.obs_dim + 2
        return NetworkSpec(n_in, self.hidden, n_out, self.activation)

    @property
    def init_count(self) -> int:
        return self.init_net.param_count if self.has_init_net else 0

    @property
    def param_count(self) -> int:
        return self.init_count + self.core_net.param_count

    def split(self, genome: np.ndarray) -> ScbParams:
        genome = np.asarray(genome)
        if genome.shape != (self.param_count,):
            raise ContractError(f"genome length {genome.shape} != {self.param_count}")
        k = self.init_count
        return ScbParams(genome[:k], genome[k:])

    def to_dict(self) -> dict:
        return {
            "env_id": self.env_id.value,
            "mode": self.mode,
            "latent_dist": self.latent_dist,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "latent_dim": self.latent_dim,
            "max_episode_len": self.max_episode_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ScbSpec:
        d = dict(d)
        d["hidden"] = tuple(d.get("hidden", (32,)))
        return cls(**d)


@dataclass(frozen=True)
class ScbParams:
    init: np.ndarray  # phi, empty in T mode
    core: np.ndarray  # theta

    @property
    def genome(self) -> np.ndarray:
        return np.concatenate([self.init, self.core])


def init_genome(spec: ScbSpec, rng: Rng) -> np.ndarray:
    parts = []
    if spec.has_init_net:
        parts.append(init_params(spec.init_net, rng.fold(0)))
    parts.append(init_params(spec.core_net, rng.fold(1)))
    return np.concatenate(parts)


def sample_latent(spec: ScbSpec, gen: np.random.Generator, n: int) -> np.ndarray:
    d = spec.latent_dim
    if spec.latent_dist == "gaussian":
        return gen.standard_normal((n, d)).astype(np.float32)
    if spec.latent_dist == "uniform01":
        return gen.random((n, d), dtype=np.float32)
    if spec.latent_dist == "categorical_uniform":
        idx = gen.integers(0, d, n)
    else:
        logits = np.arange(1, d + 1, dtype=np.float64)
        p = np.exp(logits - logits.max())
        idx = gen.choice(d, size=n, p=p / p.sum())
    z = np.zeros((n, d), dtype=np.float32)
    z[np.arange(n), idx] = 1.0
    return z


def action_encoding(env_id: EnvId | str, action) -> np.ndarray:
    """One-hot for discrete actions, box-clipped values for continuous ones.

    Accepts a single action or a batch (leading axis).
    """
    space = classic.make(env_id).action_space
    return _encode(space, action)


def _encode(space, action) -> np.ndarray:
    if isinstance(space, Discrete):
        a = np.asarray(action)
        if not space.contains(a):
            raise ContractError(f"action {action!r} outside Discrete({space.n})")
        out = np.zeros((*a.shape, space.n), dtype=np.float32)
        np.put_along_axis(out, a.astype(np.int64)[..., None], 1.0, axis=-1)
        return out
    a = np.asarray(action, dtype=np.float32)
    if a.ndim == 0:
        a = a[None]
    if a.shape[-1] != space.shape[0]:
        raise ContractError(f"continuous action of shape {a.shape} does not match {space.shape}")
    return np.clip(a, np.float32(space.low_arr), np.float32(space.high_arr))


def _finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}")
    return x


class SyntheticEnv:
    """Batched environment over one synthetic parameter vector.

    Implements the same ``reset_state``/``step_state``/``observe`` protocol as
    the classic environments, with ``state`` being the observation itself.
    """

    def __init__(self, spec: ScbSpec, genome: np.ndarray):
        self.spec = spec
        self.params = spec.split(np.asarray(genome, dtype=np.float32))
        if spec.has_init_net:
            check_params(spec.init_net, self.params.init)
        self.obs_dim = spec.obs_dim
        self.action_space = spec.action_space
        self.horizon = spec.max_episode_len
        self.env_id = spec.env_id
        self._core = spec.core_net

    def reset_state(self, gen: np.random.Generator, n: int) -> np.ndarray:
        if self.spec.mode == "T":
            ee = self.spec.ee
            return ee.observe(ee.reset_state(gen, n))
        z = sample_latent(self.spec, gen, n)
        with np.errstate(all="ignore"):
            obs = forward(self.spec.init_net, self.params.init, z)
        return _finite(obs, "initial state")

    def observe(self, state: np.ndarray) -> np.ndarray:
        return state

    def step_state(self, state: np.ndarray, action):
        x = np.concatenate([np.asarray(state, np.float32), _encode(self.action_space, action)], axis=1)
        with np.errstate(all="ignore"):
            out = forward(self._core, self.params.core, x)
        _finite(out, "network output")
        n = len(state)
        if self.spec.mode == "CB":
            return state, out[:, 0].astype(np.float64), np.ones(n, dtype=bool)
        d = self.obs_dim
        return out[:, :d], out[:, d].astype(np.float64), out[:, d + 1] > 0

    def reward(self, obs: np.ndarray, action) -> np.ndarray:
        """Immediate reward of ``action`` in ``obs`` (batched)."""
        return self.step_state(np.atleast_2d(obs), action)[1]


# --- single-episode functional API ------------------------------------------

def scb_reset(spec: ScbSpec, genome: np.ndarray, rng: Rng) -> np.ndarray:
    return SyntheticEnv(spec, genome).reset_state(rng.generator(), 1)[0]


def scb_step(spec: ScbSpec, genome: np.ndarray, obs: np.ndarray, action, t: int = 0):
    """One transition from ``obs``; ``t`` is the index of this step in the episode.

    Returns ``(next_obs, reward, done)``.
    """
    env = SyntheticEnv(spec, genome)
    a = np.asarray(action)
    a = a[None] if isinstance(spec.action_space, Discrete) else np.atleast_1d(a)[None]
    nxt, r, term = env.step_state(np.asarray(obs, np.float32)[None], a)
    done = bool(term[0]) or t + 1 >= spec.max_episode_len
    return nxt[0], float(r[0]), done


# --- persistence --------------------------------------------------------------

def save_checkpoint(path, spec: ScbSpec, genome: np.ndarray, **meta) -> None:
    meta = {"spec": spec.to_dict(), **meta}
    checkpoint.save(path, FORMAT_TAG, meta, {"genome": np.asarray(genome, np.float32)})


def load_checkpoint(path) -> tuple[ScbSpec, np.ndarray, dict]:
    meta, arrays = checkpoint.load(path, FORMAT_TAG)
    spec = ScbSpec.from_dict(meta["spec"])
    genome = arrays["genome"]
    if genome.size != spec.param_count:
        raise checkpoint.CheckpointError(f"{path}: genome has {genome.size} values, spec needs {spec.param_count}")
    return spec, genome, meta
