import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banditforge.core.nets import ContractError, NetworkSpec, flatten, forward, init_params, unflatten
from banditforge.core.rng import Rng

specs = st.builds(
    NetworkSpec,
    st.integers(1, 6),
    st.lists(st.integers(1, 8), max_size=3).map(tuple),
    st.integers(1, 4),
    st.sampled_from(["tanh", "relu", "swish"]),
)


def reference_forward(spec, params, x):
    """Layer loop written against the documented layout only."""
    h = np.asarray(x, np.float64)
    off = 0
    sizes = [spec.input_dim, *spec.hidden, spec.output_dim]
    for i in range(len(sizes) - 1):
        fi, fo = sizes[i], sizes[i + 1]
        w = np.asarray(params[off : off + fi * fo], np.float64).reshape(fi, fo)
        off += fi * fo
        b = np.asarray(params[off : off + fo], np.float64)
        off += fo
        z = h @ w + b
        if i < len(sizes) - 2:
            if spec.activation == "tanh":
                z = np.tanh(z)
            elif spec.activation == "relu":
                z = np.maximum(z, 0)
            else:
                z = z / (1 + np.exp(-z))
        h = z
    return h


def test_zero_weights_give_zero_output():
    spec = NetworkSpec(3, (5,), 2)
    out = forward(spec, np.zeros(spec.param_count, np.float32), np.ones((4, 3), np.float32))
    assert np.all(out == 0)


def test_single_tanh_unit():
    # 1 -> 1 hidden (identity weight) -> 1 output (identity weight)
    spec = NetworkSpec(1, (1,), 1, "tanh")
    params = np.array([1.0, 0.0, 1.0, 0.0], np.float32)
    assert forward(spec, params, np.array([0.5], np.float32))[0] == pytest.approx(0.46212, abs=1e-5)


def test_agent_net_param_count():
    assert NetworkSpec(4, (64, 64), 2).param_count == 4 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2 == 4610


def test_linear_map_round_trip():
    spec = NetworkSpec(3, (), 2)
    p = init_params(spec, Rng(0))
    assert np.array_equal(flatten(spec, unflatten(spec, p)), p)


def test_init_is_glorot_uniform_with_zero_bias():
    spec = NetworkSpec(30, (50,), 20)
    layers = unflatten(spec, init_params(spec, Rng(1)))
    for (w, b), (fi, fo) in zip(layers, spec.layer_shapes()):
        assert np.all(np.abs(w) <= math.sqrt(6 / (fi + fo)))
        assert np.all(b == 0)
    assert init_params(spec, Rng(1)).dtype == np.float32


@settings(max_examples=60, deadline=None)
@given(specs, st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_forward_matches_reference(spec, seed, batch):
    p = init_params(spec, Rng(seed))
    x = Rng(seed).fold(1).generator().standard_normal((batch, spec.input_dim)).astype(np.float32)
    np.testing.assert_allclose(forward(spec, p, x), reference_forward(spec, p, x), rtol=1e-4, atol=1e-5)


@settings(max_examples=60, deadline=None)
@given(specs, st.integers(0, 2**32 - 1))
def test_flatten_unflatten_round_trip(spec, seed):
    p = init_params(spec, Rng(seed)) + np.float32(0.25)
    assert np.array_equal(flatten(spec, unflatten(spec, p)), p)


def test_forward_is_deterministic():
    spec = NetworkSpec(4, (16,), 3, "swish")
    p = init_params(spec, Rng(5))
    x = np.linspace(-1, 1, 12, dtype=np.float32).reshape(3, 4)
    assert np.array_equal(forward(spec, p, x), forward(spec, p.copy(), x.copy()))


def test_shape_errors():
    spec = NetworkSpec(4, (8,), 2)
    with pytest.raises(ContractError):
        forward(spec, np.zeros(3, np.float32), np.zeros((1, 4), np.float32))
    with pytest.raises(ContractError):
        forward(spec, np.zeros(spec.param_count, np.float32), np.zeros((1, 5), np.float32))
    with pytest.raises(ContractError):
        NetworkSpec(4, (0,), 2)
    with pytest.raises(ContractError):
        NetworkSpec(4, (8,), 2, "sigmoid")


def test_single_input_keeps_rank():
    spec = NetworkSpec(2, (3,), 4)
    p = init_params(spec, Rng(0))
    assert forward(spec, p, np.ones(2, np.float32)).shape == (4,)
