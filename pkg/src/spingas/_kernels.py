"""Compiled inner loops for the fixed-step integrators.

State layout is a (3, N) float64 array of (px, py, pz) rows.  The kernels
advance a chunk of steps in place and write recorded samples into caller
supplied buffers, so long runs can be streamed chunk by chunk.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _rhs(y, nodes, weights, alpha, inv_t1, inv_t2, r_se, sign, out):
    n = y.shape[1]
    m = 0.0
    for i in range(n):
        m += weights[i] * y[0, i]
    am = alpha * m
    for i in range(n):
        out[0, i] = nodes[i] * y[1, i] + am * y[2, i] - y[0, i] * inv_t2
        out[1, i] = -nodes[i] * y[0, i] - y[1, i] * inv_t2
        out[2, i] = sign * am * y[0, i] - y[2, i] * inv_t1 + r_se
    return m


@njit(cache=True)
def _record(y, weights, k, means, full, keep_full):
    n = y.shape[1]
    for c in range(3):
        acc = 0.0
        for i in range(n):
            acc += weights[i] * y[c, i]
        means[c, k] = acc
    if keep_full:
        for c in range(3):
            for i in range(n):
                full[k, c, i] = y[c, i]


@njit(cache=True)
def advance(y, nodes, weights, alpha, inv_t1, inv_t2, r_se, sign, dt,
            n_steps, stride, step0, noise, dw, means, full, keep_full, rec0):
    """Advance ``y`` by ``n_steps`` RK4 steps, optionally followed each step by
    a Heun update of the shared y-field noise with increments ``dw``.

    A sample is stored after every step whose global index (step0 + s + 1) is a
    multiple of ``stride``.  Returns (records written, bad step or -1).
    """
    n = y.shape[1]
    k1 = np.empty((3, n))
    k2 = np.empty((3, n))
    k3 = np.empty((3, n))
    k4 = np.empty((3, n))
    tmp = np.empty((3, n))
    rec = rec0
    h2 = 0.5 * dt
    h6 = dt / 6.0
    for s in range(n_steps):
        _rhs(y, nodes, weights, alpha, inv_t1, inv_t2, r_se, sign, k1)
        for c in range(3):
            for i in range(n):
                tmp[c, i] = y[c, i] + h2 * k1[c, i]
        _rhs(tmp, nodes, weights, alpha, inv_t1, inv_t2, r_se, sign, k2)
        for c in range(3):
            for i in range(n):
                tmp[c, i] = y[c, i] + h2 * k2[c, i]
        _rhs(tmp, nodes, weights, alpha, inv_t1, inv_t2, r_se, sign, k3)
        for c in range(3):
            for i in range(n):
                tmp[c, i] = y[c, i] + dt * k3[c, i]
        _rhs(tmp, nodes, weights, alpha, inv_t1, inv_t2, r_se, sign, k4)
        for c in range(3):
            for i in range(n):
                y[c, i] += h6 * (k1[c, i] + 2.0 * k2[c, i] + 2.0 * k3[c, i] + k4[c, i])

        if noise:
            # diffusion g(y) = (pz, 0, sign*px): rotation about y by the field noise
            h = dw[s]
            for i in range(n):
                gx = y[2, i]
                gz = sign * y[0, i]
                px_p = y[0, i] + gx * h
                pz_p = y[2, i] + gz * h
                y[0, i] += 0.5 * (gx + pz_p) * h
                y[2, i] += 0.5 * (gz + sign * px_p) * h

        bad = False
        for i in range(n):
            if not (np.isfinite(y[0, i]) and np.isfinite(y[1, i]) and np.isfinite(y[2, i])):
                bad = True
                break
        if bad:
            return rec - rec0, step0 + s + 1

        if (step0 + s + 1) % stride == 0:
            _record(y, weights, rec, means, full, keep_full)
            rec += 1
    return rec - rec0, -1
