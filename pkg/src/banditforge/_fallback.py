"""Pure-numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature and semantics; :mod:`banditforge.kernels` picks one at import.
"""

from __future__ import annotations

import math

import numpy as np

TANH, RELU, SWISH = 0, 1, 2


def _activate(act: int, z: np.ndarray) -> np.ndarray:
    if act == TANH:
        return np.tanh(z)
    if act == RELU:
        return np.maximum(z, 0)
    return z / (1 + np.exp(-z))


def _activation_grad(act: int, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if act == TANH:
        return 1 - h * h
    if act == RELU:
        return (z > 0).astype(z.dtype)
    s = 1 / (1 + np.exp(-z))
    return s + h * (1 - s)


def mlp_forward(sizes, act, params, x):
    """Forward pass of a dense net stored as a flat vector.

    Returns the output and a cache holding each layer's input and
    pre-activation, consumed by :func:`mlp_backward`.
    """
    inputs, preacts = [], []
    h = x
    off = 0
    last = len(sizes) - 2
    for i in range(len(sizes) - 1):
        fi, fo = sizes[i], sizes[i + 1]
        w = params[off : off + fi * fo].reshape(fi, fo)
        off += fi * fo
        z = h @ w
        z += params[off : off + fo]
        off += fo
        inputs.append(h)
        if i < last:
            preacts.append(z)
            h = _activate(act, z)
        else:
            h = z
    return h, (inputs, preacts)


def mlp_backward(sizes, act, params, cache, dout, need_dx=False, need_dparams=True):
    """Reverse pass; returns ``(dparams, dx)`` (either may be ``None``)."""
    inputs, preacts = cache
    grad = np.empty_like(params) if need_dparams else None
    offsets = []
    off = 0
    for i in range(len(sizes) - 1):
        offsets.append(off)
        off += sizes[i] * sizes[i + 1] + sizes[i + 1]
    dz = dout
    dx = None
    for i in range(len(sizes) - 2, -1, -1):
        fi, fo = sizes[i], sizes[i + 1]
        o = offsets[i]
        w = params[o : o + fi * fo].reshape(fi, fo)
        if need_dparams:
            np.matmul(inputs[i].T, dz, out=grad[o : o + fi * fo].reshape(fi, fo))
            grad[o + fi * fo : o + fi * fo + fo] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ w.T
            dz = dh * _activation_grad(act, preacts[i - 1], inputs[i])
        elif need_dx:
            dx = dz @ w.T
    return grad, dx


# --- classic-control physics, batched over rows of ``state`` ---------------

def cartpole_step(state, action):
    x, x_dot, theta, theta_dot = state.T
    force = np.where(action == 1, 10.0, -10.0)
    costheta = np.cos(theta)
    sintheta = np.sin(theta)
    temp = (force + 0.05 * theta_dot * theta_dot * sintheta) / 1.1
    thetaacc = (9.8 * sintheta - costheta * temp) / (
        0.5 * (4.0 / 3.0 - 0.1 * costheta * costheta / 1.1)
    )
    xacc = temp - 0.05 * thetaacc * costheta / 1.1
    out = np.empty_like(state)
    out[:, 0] = x + 0.02 * x_dot
    out[:, 1] = x_dot + 0.02 * xacc
    out[:, 2] = theta + 0.02 * theta_dot
    out[:, 3] = theta_dot + 0.02 * thetaacc
    terminated = (
        (out[:, 0] < -2.4)
        | (out[:, 0] > 2.4)
        | (out[:, 2] < -12 * 2 * math.pi / 360)
        | (out[:, 2] > 12 * 2 * math.pi / 360)
    )
    return out, np.ones(len(state)), terminated


def mountaincar_step(state, action):
    position, velocity = state.T
    velocity = velocity + (action - 1) * 0.001 + np.cos(3 * position) * (-0.0025)
    velocity = np.clip(velocity, -0.07, 0.07)
    position = np.clip(position + velocity, -1.2, 0.6)
    velocity = np.where((position == -1.2) & (velocity < 0), 0.0, velocity)
    terminated = (position >= 0.5) & (velocity >= 0)
    return np.stack([position, velocity], axis=1), -np.ones(len(state)), terminated


def continuous_mountaincar_step(state, action):
    position, velocity = state.T
    a = action[:, 0]
    force = np.clip(a, -1.0, 1.0)
    velocity = velocity + force * 0.0015 - 0.0025 * np.cos(3 * position)
    velocity = np.clip(velocity, -0.07, 0.07)
    position = np.clip(position + velocity, -1.2, 0.6)
    velocity = np.where((position == -1.2) & (velocity < 0), 0.0, velocity)
    terminated = (position >= 0.45) & (velocity >= 0)
    reward = np.where(terminated, 100.0, 0.0) - 0.1 * a * a
    return np.stack([position, velocity], axis=1), reward, terminated


def _angle_normalize(x):
    return ((x + np.pi) % (2 * np.pi)) - np.pi


def pendulum_step(state, action):
    th, thdot = state.T
    u = np.clip(action[:, 0], -2.0, 2.0)
    cost = _angle_normalize(th) ** 2 + 0.1 * thdot * thdot + 0.001 * u * u
    newthdot = thdot + (3 * 10.0 / 2 * np.sin(th) + 3.0 * u) * 0.05
    newthdot = np.clip(newthdot, -8.0, 8.0)
    newth = th + newthdot * 0.05
    return np.stack([newth, newthdot], axis=1), -cost, np.zeros(len(state), dtype=bool)


def _acrobot_dsdt(s, torque):
    theta1, theta2, dtheta1, dtheta2 = s.T
    m2, l1, lc1, lc2, i1, i2, g = 1.0, 1.0, 0.5, 0.5, 1.0, 1.0, 9.8
    m1 = 1.0
    d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * np.cos(theta2)) + i1 + i2
    d2 = m2 * (lc2**2 + l1 * lc2 * np.cos(theta2)) + i2
    phi2 = m2 * lc2 * g * np.cos(theta1 + theta2 - np.pi / 2.0)
    phi1 = (
        -m2 * l1 * lc2 * dtheta2**2 * np.sin(theta2)
        - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * np.sin(theta2)
        + (m1 * lc1 + m2 * l1) * g * np.cos(theta1 - np.pi / 2)
        + phi2
    )
    ddtheta2 = (
        torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1**2 * np.sin(theta2) - phi2
    ) / (m2 * lc2**2 + i2 - d2**2 / d1)
    ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
    return np.stack([dtheta1, dtheta2, ddtheta1, ddtheta2], axis=1)


def _wrap(x, lo, hi):
    diff = hi - lo
    x = x.copy()
    while True:
        over = x > hi
        under = x < lo
        if not (over.any() or under.any()):
            return x
        x[over] -= diff
        x[under] += diff


def acrobot_step(state, action):
    torque = action.astype(np.float64) - 1.0
    dt = 0.2
    k1 = _acrobot_dsdt(state, torque)
    k2 = _acrobot_dsdt(state + dt / 2 * k1, torque)
    k3 = _acrobot_dsdt(state + dt / 2 * k2, torque)
    k4 = _acrobot_dsdt(state + dt * k3, torque)
    ns = state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    ns[:, 0] = _wrap(ns[:, 0], -np.pi, np.pi)
    ns[:, 1] = _wrap(ns[:, 1], -np.pi, np.pi)
    ns[:, 2] = np.clip(ns[:, 2], -4 * np.pi, 4 * np.pi)
    ns[:, 3] = np.clip(ns[:, 3], -9 * np.pi, 9 * np.pi)
    terminated = -np.cos(ns[:, 0]) - np.cos(ns[:, 1] + ns[:, 0]) > 1.0
    reward = np.where(terminated, 0.0, -1.0)
    return ns, reward, terminated
