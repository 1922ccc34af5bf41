"""Compiled inner loops for the built-in flows.

Every loop dispatches on an integer system id so the kernels stay plain
module-level functions and numba can cache them on disk.  Python-level
validation lives in :mod:`chaoslab.dynamics` and :mod:`chaoslab.integrate`.
"""
import numpy as np
from numba import njit

LORENZ = 0
CHUA = 1

# status codes returned by the loops
OK = 0
DIVERGED = 1


@njit(cache=True, nogil=True)
def lorenz_rhs(s, p, out):
    sigma, rho, beta = p[0], p[1], p[2]
    x, y, z = s[0], s[1], s[2]
    out[0] = sigma * (y - x)
    out[1] = x * (rho - z) - y
    out[2] = x * y - beta * z


@njit(cache=True, nogil=True)
def diode_current(v, ga, gb, bp):
    return gb * v + 0.5 * (ga - gb) * (abs(v + bp) - abs(v - bp))


@njit(cache=True, nogil=True)
def chua_rhs(s, p, out):
    # p = [c1, c2, l, r_coupling, r_inductor, ga, gb, bp, u]
    c1, c2, l, r_c, r_l = p[0], p[1], p[2], p[3], p[4]
    v1, v2, i_l = s[0], s[1], s[2]
    coupling = (v2 - v1) / r_c
    out[0] = (coupling - diode_current(v1, p[5], p[6], p[7]) + p[8]) / c1
    out[1] = (-coupling + i_l) / c2
    out[2] = (-r_l * i_l - v2) / l


@njit(cache=True, nogil=True)
def rhs(kind, s, p, out):
    if kind == LORENZ:
        lorenz_rhs(s, p, out)
    else:
        chua_rhs(s, p, out)


@njit(cache=True, nogil=True)
def rk4_inplace(kind, s, p, dt, k1, k2, k3, k4, tmp):
    n = s.shape[0]
    rhs(kind, s, p, k1)
    for q in range(n):
        tmp[q] = s[q] + 0.5 * dt * k1[q]
    rhs(kind, tmp, p, k2)
    for q in range(n):
        tmp[q] = s[q] + 0.5 * dt * k2[q]
    rhs(kind, tmp, p, k3)
    for q in range(n):
        tmp[q] = s[q] + dt * k3[q]
    rhs(kind, tmp, p, k4)
    for q in range(n):
        s[q] = s[q] + dt / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])


@njit(cache=True, nogil=True)
def scaled_norm(s, scale):
    acc = 0.0
    for q in range(s.shape[0]):
        acc += (s[q] / scale[q]) ** 2
    return np.sqrt(acc)


@njit(cache=True, nogil=True)
def integrate(kind, p, s0, dt, n_steps, transient, stride, bound, scale):
    """Fixed-step RK4 run.

    Returns ``(samples, n_recorded, status, fail_step)``.  Step ``k`` (1-based)
    is recorded when ``k > transient`` and ``(k - transient) % stride == 0``.
    """
    n = s0.shape[0]
    n_rec = (n_steps - transient) // stride
    out = np.empty((n_rec, n))
    s = s0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    j = 0
    for k in range(1, n_steps + 1):
        rk4_inplace(kind, s, p, dt, k1, k2, k3, k4, tmp)
        nrm = scaled_norm(s, scale)
        if not (nrm <= bound):
            return out, j, DIVERGED, k
        if k > transient and (k - transient) % stride == 0:
            out[j] = s
            j += 1
    return out, j, OK, 0


@njit(cache=True, nogil=True)
def benettin(kind, p, s0, dt, transient, n_steps, every, delta0, scale, bound):
    """Two-trajectory largest-exponent estimator.

    Returns ``(log_growth, n_periods, status, fail_step)`` where
    ``log_growth[k]`` is ln(d/delta0) over renormalisation period ``k``.
    Distances are measured in scaled coordinates.
    """
    n = s0.shape[0]
    n_periods = (n_steps - transient) // every
    logs = np.empty(n_periods)
    s = s0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for k in range(1, transient + 1):
        rk4_inplace(kind, s, p, dt, k1, k2, k3, k4, tmp)
        if not (scaled_norm(s, scale) <= bound):
            return logs, 0, DIVERGED, k
    # initial offset along the scaled diagonal
    q = s.copy()
    unit = delta0 / np.sqrt(n)
    for i in range(n):
        q[i] = s[i] + unit * scale[i]
    j = 0
    for k in range(1, n_periods * every + 1):
        rk4_inplace(kind, s, p, dt, k1, k2, k3, k4, tmp)
        rk4_inplace(kind, q, p, dt, k1, k2, k3, k4, tmp)
        if not (scaled_norm(s, scale) <= bound):
            return logs, j, DIVERGED, transient + k
        if k % every == 0:
            d = 0.0
            for i in range(n):
                d += ((q[i] - s[i]) / scale[i]) ** 2
            d = np.sqrt(d)
            if not (d > 0.0) or not np.isfinite(d):
                return logs, j, DIVERGED, transient + k
            logs[j] = np.log(d / delta0)
            j += 1
            f = delta0 / d
            for i in range(n):
                q[i] = s[i] + (q[i] - s[i]) * f
    return logs, j, OK, 0
