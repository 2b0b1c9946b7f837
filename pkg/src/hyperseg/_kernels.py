"""Compiled inner loops for the matrix-free Gauss-Newton operator.

Nodal fields are passed as ``(dim, n_nodes)`` arrays (one flat component
per row); cells are addressed through ``cell_base``, the flat node index of
each cell's lower corner.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def rank_one_apply(w, cell_base, voff, B, weight, out):
    """Accumulate ``sum_s weight_s b_s (b_s . w)`` into ``out``.

    ``B[s, a, k]`` is the coefficient of component ``a`` at vertex ``k`` of
    simplex ``s = t * n_cells + cell``.
    """
    dim = w.shape[0]
    T = voff.shape[0]
    N = cell_base.shape[0]
    nv = voff.shape[1]
    for t in range(T):
        for c in range(N):
            s = t * N + c
            b = cell_base[c]
            acc = 0.0
            for k in range(nv):
                node = b + voff[t, k]
                for a in range(dim):
                    acc += B[s, a, k] * w[a, node]
            acc *= weight[s]
            for k in range(nv):
                node = b + voff[t, k]
                for a in range(dim):
                    out[a, node] += acc * B[s, a, k]


@njit(cache=True, fastmath=True)
def rank_two_apply_3d(w, cell_base, voff, B1, w1, B2, w2, out):
    """Two rank-one terms per tetrahedron in one sweep (3D specialization)."""
    T = voff.shape[0]
    N = cell_base.shape[0]
    for t in range(T):
        o0 = voff[t, 0]
        o1 = voff[t, 1]
        o2 = voff[t, 2]
        o3 = voff[t, 3]
        for c in range(N):
            s = t * N + c
            b = cell_base[c]
            n0 = b + o0
            n1 = b + o1
            n2 = b + o2
            n3 = b + o3
            a1 = 0.0
            a2 = 0.0
            for a in range(3):
                x0 = w[a, n0]
                x1 = w[a, n1]
                x2 = w[a, n2]
                x3 = w[a, n3]
                a1 += B1[s, a, 0] * x0 + B1[s, a, 1] * x1 + B1[s, a, 2] * x2 + B1[s, a, 3] * x3
                a2 += B2[s, a, 0] * x0 + B2[s, a, 1] * x1 + B2[s, a, 2] * x2 + B2[s, a, 3] * x3
            a1 *= w1[s]
            a2 *= w2[s]
            for a in range(3):
                out[a, n0] += a1 * B1[s, a, 0] + a2 * B2[s, a, 0]
                out[a, n1] += a1 * B1[s, a, 1] + a2 * B2[s, a, 1]
                out[a, n2] += a1 * B1[s, a, 2] + a2 * B2[s, a, 2]
                out[a, n3] += a1 * B1[s, a, 3] + a2 * B2[s, a, 3]


@njit(cache=True, fastmath=True)
def fit_gn_apply(wY, wC, grads, labels, cell_base, coff, scale, outY, outC):
    """Data-term Gauss-Newton block; ``scale = h^d``.

    ``outY`` and ``outC`` are overwritten.
    """
    dim = wY.shape[0]
    N = cell_base.shape[0]
    ncorner = coff.shape[0]
    inv = 1.0 / ncorner
    outY[:] = 0.0
    outC[:] = 0.0
    for c in range(N):
        b = cell_base[c]
        u = 0.0
        for q in range(dim):
            acc = 0.0
            for k in range(ncorner):
                acc += wY[q, b + coff[k]]
            u += grads[c, q] * acc * inv
        u -= wC[labels[c]]
        u *= scale
        for q in range(dim):
            g = grads[c, q] * u * inv
            for k in range(ncorner):
                outY[q, b + coff[k]] += g
        outC[labels[c]] -= u


@njit(cache=True, fastmath=True)
def graph_laplacian_apply(w, shape, scale, out):
    """Accumulate ``scale * A^T A w`` for forward differences on a nodal grid."""
    dim = w.shape[0]
    nn = w.shape[1]
    stride = 1
    for ax in range(shape.shape[0]):
        m = shape[ax]
        for i in range(nn):
            pos = (i // stride) % m
            if pos + 1 < m:
                j = i + stride
                for a in range(dim):
                    d = (w[a, j] - w[a, i]) * scale
                    out[a, j] += d
                    out[a, i] -= d
        stride *= m


@njit(cache=True, fastmath=True)
def _weights(u, w, dw):
    v = 1.0 - u
    u2 = u * u
    u3 = u2 * u
    w[0] = v * v * v / 6.0
    w[1] = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0
    w[2] = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0
    w[3] = u3 / 6.0
    dw[0] = -v * v / 2.0
    dw[1] = (3.0 * u2 - 4.0 * u) / 2.0
    dw[2] = (-3.0 * u2 + 2.0 * u + 1.0) / 2.0
    dw[3] = u2 / 2.0


@njit(cache=True, fastmath=True)
def bspline_eval_2d(coef, base, u, inv_h, gradient, values, grads):
    """Tensor cubic B-spline values (and gradients) at points with given cell bases."""
    wx = np.empty(4)
    wy = np.empty(4)
    dx = np.empty(4)
    dy = np.empty(4)
    for p in range(base.shape[0]):
        _weights(u[p, 0], wx, dx)
        _weights(u[p, 1], wy, dy)
        i0 = base[p, 0]
        j0 = base[p, 1]
        v = 0.0
        g0 = 0.0
        g1 = 0.0
        for i in range(4):
            for j in range(4):
                c = coef[i0 + i, j0 + j]
                v += wx[i] * wy[j] * c
                if gradient:
                    g0 += dx[i] * wy[j] * c
                    g1 += wx[i] * dy[j] * c
        values[p] = v
        if gradient:
            grads[p, 0] = g0 * inv_h
            grads[p, 1] = g1 * inv_h


@njit(cache=True, fastmath=True)
def bspline_eval_3d(coef, base, u, inv_h, gradient, values, grads):
    wx = np.empty(4)
    wy = np.empty(4)
    wz = np.empty(4)
    dx = np.empty(4)
    dy = np.empty(4)
    dz = np.empty(4)
    for p in range(base.shape[0]):
        _weights(u[p, 0], wx, dx)
        _weights(u[p, 1], wy, dy)
        _weights(u[p, 2], wz, dz)
        i0 = base[p, 0]
        j0 = base[p, 1]
        k0 = base[p, 2]
        v = 0.0
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        for i in range(4):
            for j in range(4):
                vz = 0.0
                gz = 0.0
                for k in range(4):
                    c = coef[i0 + i, j0 + j, k0 + k]
                    vz += wz[k] * c
                    if gradient:
                        gz += dz[k] * c
                v += wx[i] * wy[j] * vz
                if gradient:
                    g0 += dx[i] * wy[j] * vz
                    g1 += wx[i] * dy[j] * vz
                    g2 += wx[i] * wy[j] * gz
        values[p] = v
        if gradient:
            grads[p, 0] = g0 * inv_h
            grads[p, 1] = g1 * inv_h
            grads[p, 2] = g2 * inv_h
