# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: stencil application and batched matrix-game solves.

Mirrors ``_kernels_py`` exactly (same pivot rule, same tie-breaking).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double PIVOT_EPS = 1e-12
cdef int MAX_PIVOTS = 10000


def stencil_apply(const double[::1] f, const cnp.int64_t[:, ::1] nbr,
                  const double[:, :, ::1] w, const double[:, ::1] diag):
    cdef Py_ssize_t P = w.shape[0], N = w.shape[1], S = w.shape[2]
    cdef Py_ssize_t p, k, s
    cdef double acc
    out = np.empty((P, N))
    cdef double[:, ::1] o = out
    for p in range(P):
        for k in range(N):
            acc = diag[p, k] * f[k]
            for s in range(S):
                acc += w[p, k, s] * f[nbr[k, s]]
            o[p, k] = acc
    return out


cdef double _lp_game(const double[:, :] g, Py_ssize_t m, Py_ssize_t n,
                     double* p1, double* p2, double* t, int* basis) nogil:
    """Value LP for one game; fills p1, p2. ``t`` has (m+1)*(n+m+1) slots."""
    cdef Py_ssize_t i, j, r, k, row, col, ibest = 0, jbest = 0
    cdef Py_ssize_t W = n + m + 1
    cdef double v, x, best, ratio, scale, gmin, shift, piv, factor, s1, s2
    cdef double maxmin = -1e308, minmax = 1e308
    cdef int pivots

    # pure-strategy saddle scan
    for i in range(m):
        x = g[i, 0]
        for j in range(1, n):
            if g[i, j] < x:
                x = g[i, j]
        if x > maxmin:
            maxmin = x
            ibest = i
    for j in range(n):
        x = g[0, j]
        for i in range(1, m):
            if g[i, j] > x:
                x = g[i, j]
        if x < minmax:
            minmax = x
            jbest = j
    for i in range(m):
        p1[i] = 0.0
    for j in range(n):
        p2[j] = 0.0
    if maxmin == minmax:
        p1[ibest] = 1.0
        p2[jbest] = 1.0
        return maxmin

    scale = 0.0
    gmin = 1e308
    for i in range(m):
        for j in range(n):
            if fabs(g[i, j]) > scale:
                scale = fabs(g[i, j])
    for i in range(m):
        for j in range(n):
            if g[i, j] / scale < gmin:
                gmin = g[i, j] / scale
    shift = 1.0 - gmin

    for k in range((m + 1) * W):
        t[k] = 0.0
    for i in range(m):
        for j in range(n):
            t[i * W + j] = g[i, j] / scale + shift
        t[i * W + n + i] = 1.0
        t[i * W + W - 1] = 1.0
        basis[i] = <int>(n + i)
    for j in range(n):
        t[m * W + j] = -1.0

    pivots = 0
    while pivots < MAX_PIVOTS:
        col = -1
        for k in range(n + m):
            if t[m * W + k] < -PIVOT_EPS:
                col = k
                break
        if col < 0:
            break
        row = -1
        best = 0.0
        for r in range(m):
            if t[r * W + col] > PIVOT_EPS:
                ratio = t[r * W + W - 1] / t[r * W + col]
                if row < 0 or ratio < best or (ratio == best and basis[r] < basis[row]):
                    row = r
                    best = ratio
        piv = t[row * W + col]
        for k in range(W):
            t[row * W + k] /= piv
        for r in range(m + 1):
            if r != row:
                factor = t[r * W + col]
                if factor != 0.0:
                    for k in range(W):
                        t[r * W + k] -= factor * t[row * W + k]
        basis[row] = <int>col
        pivots += 1

    for r in range(m):
        if basis[r] < n:
            p2[basis[r]] = t[r * W + W - 1]
    for i in range(m):
        p1[i] = t[m * W + n + i]
    v = 1.0 / t[m * W + W - 1]
    s1 = 0.0
    s2 = 0.0
    for i in range(m):
        x = p1[i] * v
        p1[i] = x if x > 0.0 else 0.0
        s1 += p1[i]
    for j in range(n):
        x = p2[j] * v
        p2[j] = x if x > 0.0 else 0.0
        s2 += p2[j]
    for i in range(m):
        p1[i] /= s1
    for j in range(n):
        p2[j] /= s2
    return (v - shift) * scale


def solve_games(G):
    """Batched matrix games (rows maximize): returns (values, p1, p2)."""
    cdef const double[:, :, :] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef Py_ssize_t N = g.shape[0], m = g.shape[1], n = g.shape[2], k, i, j
    values = np.empty(N)
    P1 = np.empty((N, m))
    P2 = np.empty((N, n))
    cdef double[::1] vv = values
    cdef double[:, ::1] q1 = P1
    cdef double[:, ::1] q2 = P2
    cdef double* t = <double*>malloc((m + 1) * (n + m + 1) * sizeof(double))
    cdef int* basis = <int*>malloc(m * sizeof(int))
    cdef double* a1 = <double*>malloc(m * sizeof(double))
    cdef double* a2 = <double*>malloc(n * sizeof(double))
    try:
        with nogil:
            for k in range(N):
                vv[k] = _lp_game(g[k], m, n, a1, a2, t, basis)
                for i in range(m):
                    q1[k, i] = a1[i]
                for j in range(n):
                    q2[k, j] = a2[j]
    finally:
        free(t)
        free(basis)
        free(a1)
        free(a2)
    return values, P1, P2


def game_values(G):
    """Batched matrix-game values (rows maximize)."""
    cdef const double[:, :, :] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef Py_ssize_t N = g.shape[0], m = g.shape[1], n = g.shape[2], k
    values = np.empty(N)
    cdef double[::1] vv = values
    cdef double* t = <double*>malloc((m + 1) * (n + m + 1) * sizeof(double))
    cdef int* basis = <int*>malloc(m * sizeof(int))
    cdef double* a1 = <double*>malloc(m * sizeof(double))
    cdef double* a2 = <double*>malloc(n * sizeof(double))
    try:
        with nogil:
            for k in range(N):
                vv[k] = _lp_game(g[k], m, n, a1, a2, t, basis)
    finally:
        free(t)
        free(basis)
        free(a1)
        free(a2)
    return values
