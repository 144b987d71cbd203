"""A small reverse-mode autodiff tape over numpy arrays.

Only the primitives the RL losses need are supported.  Anything else, such
as calling a numpy ufunc on a :class:`Tensor` or raising to a power other
than 2, raises :class:`UnsupportedOpError` instead of silently dropping the
gradient.
"""

from __future__ import annotations

import math

import numpy as np

from banditforge import kernels
from banditforge.core.nets import NetworkSpec, check_params

_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


class UnsupportedOpError(TypeError):
    pass


class Tensor:
    __slots__ = ("value", "parents", "backward", "needs_grad")

    def __init__(self, value, parents=(), backward=None, needs_grad=False):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value)
        self.parents = parents
        self.backward = backward
        self.needs_grad = needs_grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, needs_grad={self.needs_grad})"

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    # numpy must never see a Tensor as an array-like
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        op = _UFUNCS.get(ufunc.__name__) if method == "__call__" and not kwargs else None
        if op is None:
            raise UnsupportedOpError(f"numpy ufunc {ufunc.__name__} is not a differentiable primitive")
        return op(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        raise UnsupportedOpError(f"numpy function {func.__name__} is not a differentiable primitive")

    def __array__(self, *args, **kwargs):
        raise UnsupportedOpError("implicit conversion of a Tensor to an array drops its gradient")

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __rtruediv__ = lambda a, b: div(b, a)
    __matmul__ = lambda a, b: matmul(a, b)
    __rmatmul__ = lambda a, b: matmul(b, a)
    __neg__ = lambda a: neg(a)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        raise UnsupportedOpError(f"power {p!r} is not supported; only square")

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def param(value) -> Tensor:
    """A leaf whose gradient is wanted."""
    return Tensor(np.asarray(value), needs_grad=True)


def const(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value))


def stop_gradient(x) -> Tensor:
    return Tensor(const(x).value)


def _node(value, parents, backward) -> Tensor:
    if any(p.needs_grad for p in parents):
        return Tensor(value, parents, backward, True)
    return Tensor(value)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = const(a), const(b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = const(a), const(b)
    return _node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = const(a), const(b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = const(a), const(b)
    out = a.value / b.value
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.value, a.shape), _unbroadcast(-g * out / b.value, b.shape)),
    )


def neg(a) -> Tensor:
    a = const(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = const(a)
    return _node(a.value * a.value, (a,), lambda g: (2 * g * a.value,))


def exp(a) -> Tensor:
    a = const(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = const(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def tanh(a) -> Tensor:
    a = const(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1 - out * out),))


def relu(a) -> Tensor:
    a = const(a)
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0), (a,), lambda g: (g * mask,))


def swish(a) -> Tensor:
    a = const(a)
    s = 1 / (1 + np.exp(-a.value))
    out = a.value * s
    return _node(out, (a,), lambda g: (g * (s + out * (1 - s)),))


def clip(a, lo, hi) -> Tensor:
    a = const(a)
    mask = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,))


def minimum(a, b) -> Tensor:
    a, b = const(a), const(b)
    pick_a = a.value <= b.value
    return _node(
        np.where(pick_a, a.value, b.value),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
    )


# --- reductions and shape ---------------------------------------------------

def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = const(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(out, (a,), backward)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = const(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return reduce_sum(a, axis, keepdims) * (1.0 / n)


def getitem(a, idx) -> Tensor:
    a = const(a)

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        return (full,)

    return _node(a.value[idx], (a,), backward)


def reshape(a, shape) -> Tensor:
    a = const(a)
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(xs, axis=-1) -> Tensor:
    xs = [const(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _node(
        np.concatenate([x.value for x in xs], axis=axis),
        tuple(xs),
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


# --- composite primitives ---------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = const(a), const(b)
    return _node(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ np.swapaxes(b.value, -1, -2), np.swapaxes(a.value, -1, -2) @ g),
    )


def affine(x, w, b) -> Tensor:
    return add(matmul(x, w), b)


def softmax(a, axis=-1) -> Tensor:
    a = const(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward)


def log_softmax(a, axis=-1) -> Tensor:
    a = const(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), backward)


def gaussian_logpdf(x, mean, log_std) -> Tensor:
    """Elementwise log-density of ``x`` under N(mean, exp(log_std)^2)."""
    x, mean, log_std = const(x), const(mean), const(log_std)
    inv_std = np.exp(-log_std.value)
    zs = (x.value - mean.value) * inv_std
    out = -0.5 * zs * zs - log_std.value - _HALF_LOG_2PI

    def backward(g):
        dx = -g * zs * inv_std
        return (
            _unbroadcast(dx, x.shape),
            _unbroadcast(-dx, mean.shape),
            _unbroadcast(g * (zs * zs - 1), log_std.shape),
        )

    return _node(out, (x, mean, log_std), backward)


def mlp(spec: NetworkSpec, params, x) -> Tensor:
    """Fused forward pass of a :class:`NetworkSpec` net on a batch."""
    params, x = const(params), const(x)
    check_params(spec, params.value)
    xv = np.ascontiguousarray(x.value, dtype=params.value.dtype)
    if xv.ndim != 2 or xv.shape[1] != spec.input_dim:
        from banditforge.core.nets import ContractError

        raise ContractError(f"input of shape {xv.shape} does not match input_dim={spec.input_dim}")
    out, cache = kernels.mlp_forward(spec.sizes, spec.act_code, params.value, xv)

    def backward(g):
        dp, dx = kernels.mlp_backward(
            spec.sizes,
            spec.act_code,
            params.value,
            cache,
            np.ascontiguousarray(g, dtype=params.value.dtype),
            x.needs_grad,
            params.needs_grad,
        )
        return dp, dx

    return _node(out, (params, x), backward)


_UFUNCS = {
    "add": add,
    "subtract": sub,
    "multiply": mul,
    "divide": div,
    "true_divide": div,
    "matmul": matmul,
    "negative": neg,
    "square": square,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "minimum": minimum,
}


# --- driver -----------------------------------------------------------------

def grad(loss: Tensor, wrt) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``."""
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.needs_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.needs_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or node.backward is None:
            if g is not None:
                grads[id(node)] = g
            continue
        for p, pg in zip(node.parents, node.backward(g)):
            if pg is None or not p.needs_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    return [
        np.asarray(grads.get(id(w), np.zeros_like(w.value)), dtype=w.value.dtype).reshape(w.shape)
        for w in wrt
    ]


def gradient(spec: NetworkSpec, params: np.ndarray, x: np.ndarray, loss_fn) -> np.ndarray:
    """d loss_fn(forward(spec, params, x)) / d params."""
    p = param(np.asarray(params))
    x = np.asarray(x, dtype=p.value.dtype)
    out = mlp(spec, p, x if x.ndim == 2 else x[None])
    if x.ndim == 1:
        out = out[0]
    return grad(loss_fn(out), [p])[0]


def value_and_grad(fn, *params):
    """Evaluate ``fn(*tensors)`` and return its value and gradients."""
    ps = [param(np.asarray(p)) for p in params]
    loss = fn(*ps)
    return loss.item(), grad(loss, ps)
