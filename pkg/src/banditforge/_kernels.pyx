# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: fused MLP passes over BLAS and batched classic-control physics.

Semantics mirror ``banditforge._fallback`` exactly; only the summation order
inside BLAS and libm rounding may differ.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, fmod, M_PI
from scipy.linalg.cython_blas cimport sgemm, dgemm

cnp.import_array()

ctypedef fused real:
    float
    double

cdef enum:
    TANH = 0
    RELU = 1
    SWISH = 2


cdef inline void _gemm(char ta, char tb, int m, int n, int k, real* a, int lda,
                       real* b, int ldb, real beta, real* c, int ldc) noexcept nogil:
    cdef float one_f = 1.0, beta_f
    cdef double one_d = 1.0, beta_d
    if real is float:
        beta_f = beta
        sgemm(&ta, &tb, &m, &n, &k, &one_f, a, &lda, b, &ldb, &beta_f, c, &ldc)
    else:
        beta_d = beta
        dgemm(&ta, &tb, &m, &n, &k, &one_d, a, &lda, b, &ldb, &beta_d, c, &ldc)


cdef void _affine(real[:, ::1] x, real* w, real* b, real[:, ::1] z) noexcept nogil:
    # z = x @ w + b, all row-major
    cdef Py_ssize_t n = x.shape[0], fo = z.shape[1], i, j
    cdef int fi = x.shape[1]
    for i in range(n):
        for j in range(fo):
            z[i, j] = b[j]
    if n > 0:
        _gemm(c'N', c'N', <int>fo, <int>n, fi, w, <int>fo, &x[0, 0], fi, 1.0, &z[0, 0], <int>fo)


cdef void _relu(real[:, ::1] z, real[:, ::1] h) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef real v
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            v = z[i, j]
            h[i, j] = v if v > 0 else 0


cdef object _activate(int act, object z_arr, object h_arr):
    # libm tanhf/expf are scalar; numpy's ufuncs are SIMD and several times faster
    if act == TANH:
        np.tanh(z_arr, out=h_arr)
    elif act == SWISH:
        np.exp(np.negative(z_arr), out=h_arr)
        h_arr += 1
        np.divide(z_arr, h_arr, out=h_arr)
    return h_arr


def _forward(tuple sizes, int act, real[::1] params, real[:, ::1] x, object dtype):
    cdef Py_ssize_t nl = len(sizes) - 1, li, off = 0, n = x.shape[0]
    cdef int fi, fo
    cdef real[:, ::1] h = x
    cdef real[:, ::1] z
    h_arr = x.base
    inputs = []
    preacts = []
    for li in range(nl):
        fi = sizes[li]
        fo = sizes[li + 1]
        z_arr = np.empty((n, fo), dtype=dtype)
        z = z_arr
        _affine(h, &params[off], &params[off + fi * fo], z)
        off += fi * fo + fo
        inputs.append(h_arr)
        if li == nl - 1:
            return z_arr, (inputs, preacts)
        preacts.append(z_arr)
        h_arr = np.empty((n, fo), dtype=dtype)
        h = h_arr
        if act == RELU:
            _relu(z, h)
        else:
            _activate(act, z_arr, h_arr)


cdef object _writable(object a, object dtype):
    # typed memoryviews refuse read-only buffers
    return np.require(a, dtype, ("C", "W"))


def mlp_forward(tuple sizes, int act, params, x):
    params = _writable(params, params.dtype)
    x = _writable(x, params.dtype)
    if params.dtype == np.float32:
        return _forward(sizes, act, params, x, np.float32)
    return _forward(sizes, act, params, x, np.float64)


def _backward(tuple sizes, int act, real[::1] params, tuple cache, real[:, ::1] dout,
              bint need_dx, bint need_dparams, object dtype):
    cdef list inputs = cache[0]
    cdef list preacts = cache[1]
    cdef Py_ssize_t nl = len(sizes) - 1, li, i, j, n = dout.shape[0]
    cdef int fi, fo
    cdef Py_ssize_t off
    cdef real[::1] grad
    cdef real[:, ::1] dz = dout
    cdef real[:, ::1] dh, xin, zpre
    cdef real v, hv
    offsets = [0] * nl
    off = 0
    for li in range(nl):
        offsets[li] = off
        off += sizes[li] * sizes[li + 1] + sizes[li + 1]
    grad_arr = np.empty(off, dtype=dtype) if need_dparams else None
    if need_dparams:
        grad = grad_arr
    dx_arr = None
    for li in range(nl - 1, -1, -1):
        fi = sizes[li]
        fo = sizes[li + 1]
        off = offsets[li]
        xin = inputs[li]
        if need_dparams:
            if n > 0:
                _gemm(c'N', c'T', fo, fi, <int>n, &dz[0, 0], fo, &xin[0, 0], fi, 0.0,
                      &grad[off], fo)
            else:
                for j in range(fi * fo):
                    grad[off + j] = 0
            for j in range(fo):
                v = 0
                for i in range(n):
                    v = v + dz[i, j]
                grad[off + fi * fo + j] = v
        if li > 0 or need_dx:
            dh_arr = np.empty((n, fi), dtype=dtype)
            dh = dh_arr
            if n > 0:
                _gemm(c'T', c'N', fi, <int>n, fo, &params[off], fo, &dz[0, 0], fo, 0.0,
                      &dh[0, 0], fi)
            if li == 0:
                dx_arr = dh_arr
                break
            zpre = preacts[li - 1]
            if act == SWISH:
                sig = 1 / (1 + np.exp(-preacts[li - 1]))
                dh_arr *= sig + inputs[li] * (1 - sig)
            else:
                for i in range(n):
                    for j in range(fi):
                        if act == TANH:
                            hv = xin[i, j]
                            dh[i, j] = dh[i, j] * (1 - hv * hv)
                        elif zpre[i, j] <= 0:
                            dh[i, j] = 0
            dz = dh
    return grad_arr, dx_arr


def mlp_backward(tuple sizes, int act, params, tuple cache, dout, need_dx=False, need_dparams=True):
    params = _writable(params, params.dtype)
    dout = _writable(dout, params.dtype)
    if params.dtype == np.float32:
        return _backward(sizes, act, params, cache, dout, need_dx, need_dparams, np.float32)
    return _backward(sizes, act, params, cache, dout, need_dx, need_dparams, np.float64)


# --- classic-control physics -------------------------------------------------

def cartpole_step(state, action):
    return _cartpole_step(_writable(state, np.float64), action)


cdef object _cartpole_step(double[:, ::1] state, action):
    cdef long[::1] a = np.ascontiguousarray(action, dtype=np.int64)
    cdef Py_ssize_t n = state.shape[0], i
    out_arr = np.empty((n, 4))
    term_arr = np.empty(n, dtype=bool)
    cdef double[:, ::1] out = out_arr
    cdef cnp.npy_bool[::1] term = term_arr.view(np.uint8)
    cdef double x, x_dot, theta, theta_dot, force, ct, st, temp, thetaacc, xacc
    cdef double thr = 12 * 2 * M_PI / 360
    for i in range(n):
        x = state[i, 0]
        x_dot = state[i, 1]
        theta = state[i, 2]
        theta_dot = state[i, 3]
        force = 10.0 if a[i] == 1 else -10.0
        ct = cos(theta)
        st = sin(theta)
        temp = (force + 0.05 * theta_dot * theta_dot * st) / 1.1
        thetaacc = (9.8 * st - ct * temp) / (0.5 * (4.0 / 3.0 - 0.1 * ct * ct / 1.1))
        xacc = temp - 0.05 * thetaacc * ct / 1.1
        out[i, 0] = x + 0.02 * x_dot
        out[i, 1] = x_dot + 0.02 * xacc
        out[i, 2] = theta + 0.02 * theta_dot
        out[i, 3] = theta_dot + 0.02 * thetaacc
        term[i] = (out[i, 0] < -2.4 or out[i, 0] > 2.4 or out[i, 2] < -thr or out[i, 2] > thr)
    return out_arr, np.ones(n), term_arr


cdef inline double _clip(double v, double lo, double hi) noexcept nogil:
    return lo if v < lo else (hi if v > hi else v)


def mountaincar_step(state, action):
    return _mountaincar_step(_writable(state, np.float64), action)


cdef object _mountaincar_step(double[:, ::1] state, action):
    cdef long[::1] a = np.ascontiguousarray(action, dtype=np.int64)
    cdef Py_ssize_t n = state.shape[0], i
    out_arr = np.empty((n, 2))
    term_arr = np.empty(n, dtype=bool)
    cdef double[:, ::1] out = out_arr
    cdef cnp.npy_bool[::1] term = term_arr.view(np.uint8)
    cdef double p, v
    for i in range(n):
        p = state[i, 0]
        v = state[i, 1] + (a[i] - 1) * 0.001 + cos(3 * p) * (-0.0025)
        v = _clip(v, -0.07, 0.07)
        p = _clip(p + v, -1.2, 0.6)
        if p == -1.2 and v < 0:
            v = 0.0
        out[i, 0] = p
        out[i, 1] = v
        term[i] = p >= 0.5 and v >= 0
    return out_arr, -np.ones(n), term_arr


def continuous_mountaincar_step(state, action):
    return _continuous_mountaincar_step(_writable(state, np.float64), action)


cdef object _continuous_mountaincar_step(double[:, ::1] state, action):
    cdef double[:, ::1] a = np.ascontiguousarray(action, dtype=np.float64)
    cdef Py_ssize_t n = state.shape[0], i
    out_arr = np.empty((n, 2))
    rew_arr = np.empty(n)
    term_arr = np.empty(n, dtype=bool)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] rew = rew_arr
    cdef cnp.npy_bool[::1] term = term_arr.view(np.uint8)
    cdef double p, v, u
    for i in range(n):
        u = a[i, 0]
        p = state[i, 0]
        v = state[i, 1] + _clip(u, -1.0, 1.0) * 0.0015 - 0.0025 * cos(3 * p)
        v = _clip(v, -0.07, 0.07)
        p = _clip(p + v, -1.2, 0.6)
        if p == -1.2 and v < 0:
            v = 0.0
        out[i, 0] = p
        out[i, 1] = v
        term[i] = p >= 0.45 and v >= 0
        rew[i] = (100.0 if term[i] else 0.0) - 0.1 * u * u
    return out_arr, rew_arr, term_arr


def pendulum_step(state, action):
    return _pendulum_step(_writable(state, np.float64), action)


cdef object _pendulum_step(double[:, ::1] state, action):
    cdef double[:, ::1] a = np.ascontiguousarray(action, dtype=np.float64)
    cdef Py_ssize_t n = state.shape[0], i
    out_arr = np.empty((n, 2))
    rew_arr = np.empty(n)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] rew = rew_arr
    cdef double th, thdot, u, norm_th, newthdot
    for i in range(n):
        th = state[i, 0]
        thdot = state[i, 1]
        u = _clip(a[i, 0], -2.0, 2.0)
        # python-style modulo (result has the sign of the divisor)
        norm_th = fmod(th + M_PI, 2 * M_PI)
        if norm_th < 0:
            norm_th = norm_th + 2 * M_PI
        norm_th = norm_th - M_PI
        rew[i] = -(norm_th * norm_th + 0.1 * thdot * thdot + 0.001 * u * u)
        newthdot = _clip(thdot + (3 * 10.0 / 2 * sin(th) + 3.0 * u) * 0.05, -8.0, 8.0)
        out[i, 0] = th + newthdot * 0.05
        out[i, 1] = newthdot
    return out_arr, rew_arr, np.zeros(n, dtype=bool)


cdef void _acrobot_dsdt(double* s, double torque, double* ds) noexcept nogil:
    cdef double theta1 = s[0], theta2 = s[1], dtheta1 = s[2], dtheta2 = s[3]
    cdef double m1 = 1.0, m2 = 1.0, l1 = 1.0, lc1 = 0.5, lc2 = 0.5, i1 = 1.0, i2 = 1.0, g = 9.8
    cdef double d1, d2, phi1, phi2, dd1, dd2
    d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2 * l1 * lc2 * cos(theta2)) + i1 + i2
    d2 = m2 * (lc2 * lc2 + l1 * lc2 * cos(theta2)) + i2
    phi2 = m2 * lc2 * g * cos(theta1 + theta2 - M_PI / 2.0)
    phi1 = (-m2 * l1 * lc2 * dtheta2 * dtheta2 * sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * cos(theta1 - M_PI / 2) + phi2)
    dd2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * sin(theta2) - phi2) / (
        m2 * lc2 * lc2 + i2 - d2 * d2 / d1)
    dd1 = -(d2 * dd2 + phi1) / d1
    ds[0] = dtheta1
    ds[1] = dtheta2
    ds[2] = dd1
    ds[3] = dd2


cdef inline double _wrap(double x, double lo, double hi) noexcept nogil:
    cdef double diff = hi - lo
    while x > hi:
        x = x - diff
    while x < lo:
        x = x + diff
    return x


def acrobot_step(state, action):
    return _acrobot_step(_writable(state, np.float64), action)


cdef object _acrobot_step(double[:, ::1] state, action):
    cdef long[::1] a = np.ascontiguousarray(action, dtype=np.int64)
    cdef Py_ssize_t n = state.shape[0], i, j
    out_arr = np.empty((n, 4))
    rew_arr = np.empty(n)
    term_arr = np.empty(n, dtype=bool)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] rew = rew_arr
    cdef cnp.npy_bool[::1] term = term_arr.view(np.uint8)
    cdef double s[4]
    cdef double y[4]
    cdef double k1[4]
    cdef double k2[4]
    cdef double k3[4]
    cdef double k4[4]
    cdef double torque, dt = 0.2
    for i in range(n):
        torque = <double>a[i] - 1.0
        for j in range(4):
            s[j] = state[i, j]
        _acrobot_dsdt(s, torque, k1)
        for j in range(4):
            y[j] = s[j] + dt / 2 * k1[j]
        _acrobot_dsdt(y, torque, k2)
        for j in range(4):
            y[j] = s[j] + dt / 2 * k2[j]
        _acrobot_dsdt(y, torque, k3)
        for j in range(4):
            y[j] = s[j] + dt * k3[j]
        _acrobot_dsdt(y, torque, k4)
        for j in range(4):
            y[j] = s[j] + dt / 6.0 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j])
        y[0] = _wrap(y[0], -M_PI, M_PI)
        y[1] = _wrap(y[1], -M_PI, M_PI)
        y[2] = _clip(y[2], -4 * M_PI, 4 * M_PI)
        y[3] = _clip(y[3], -9 * M_PI, 9 * M_PI)
        for j in range(4):
            out[i, j] = y[j]
        term[i] = -cos(y[0]) - cos(y[1] + y[0]) > 1.0
        rew[i] = 0.0 if term[i] else -1.0
    return out_arr, rew_arr, term_arr
