"""Pure-Python/numpy implementations of the hot kernels.

Same call signatures as the compiled ``_kernels`` extension; selected by
:mod:`ergodic_games.kernels` when the extension is unavailable.
"""

import numpy as np

PIVOT_EPS = 1e-12
MAX_PIVOTS = 10_000


def stencil_apply(f, nbr, w, diag):
    """Discrete generator values for every control pair and node.

    f: (N,), nbr: (N, S) int, w: (P, N, S), diag: (P, N) -> (P, N)
    """
    f = np.asarray(f, dtype=np.float64)
    return np.einsum("pks,ks->pk", w, f[nbr]) + diag * f


def lp_game(g):
    """Solve one matrix game (rows maximize) by the value LP with Bland's rule.

    Returns (value, p1, p2, pivots).
    """
    g = np.asarray(g, dtype=np.float64)
    m, n = g.shape
    rowmin = g.min(axis=1)
    colmax = g.max(axis=0)
    i = int(np.argmax(rowmin))
    j = int(np.argmin(colmax))
    if rowmin[i] == colmax[j]:
        p1 = np.zeros(m)
        p2 = np.zeros(n)
        p1[i] = 1.0
        p2[j] = 1.0
        return float(rowmin[i]), p1, p2, 0

    scale = float(np.abs(g).max())
    a = g / scale
    shift = 1.0 - a.min()
    a = a + shift

    # maximize sum(z) s.t. a z <= 1, z >= 0; slacks form the initial basis
    t = np.zeros((m + 1, n + m + 1))
    t[:m, :n] = a
    t[:m, n:n + m] = np.eye(m)
    t[:m, -1] = 1.0
    t[m, :n] = -1.0
    basis = list(range(n, n + m))

    pivots = 0
    while pivots < MAX_PIVOTS:
        col = -1
        for k in range(n + m):
            if t[m, k] < -PIVOT_EPS:
                col = k
                break
        if col < 0:
            break
        row = -1
        best = 0.0
        for r in range(m):
            if t[r, col] > PIVOT_EPS:
                ratio = t[r, -1] / t[r, col]
                if row < 0 or ratio < best or (ratio == best and basis[r] < basis[row]):
                    row = r
                    best = ratio
        # bounded: a > 0 so some entry in the column is positive
        t[row] /= t[row, col]
        for r in range(m + 1):
            if r != row and t[r, col] != 0.0:
                t[r] -= t[r, col] * t[row]
        basis[row] = col
        pivots += 1

    z = np.zeros(n)
    for r, bv in enumerate(basis):
        if bv < n:
            z[bv] = t[r, -1]
    y = t[m, n:n + m].copy()
    v = 1.0 / t[m, -1]
    p2 = _clean(z * v)
    p1 = _clean(y * v)
    value = (v - shift) * scale
    return value, p1, p2, pivots


def _clean(p):
    p = np.maximum(p, 0.0)
    s = p.sum()
    return p / s


def _pure_scan(G):
    rowmin = G.min(axis=2)
    colmax = G.max(axis=1)
    maxmin = rowmin.max(axis=1)
    minmax = colmax.min(axis=1)
    return rowmin, colmax, maxmin, maxmin == minmax


def game_values(G):
    """Values of a batch of matrix games. G: (N, m, n) -> (N,)."""
    G = np.asarray(G, dtype=np.float64)
    N, m, n = G.shape
    if m == 1 or n == 1:
        return G.min(axis=2).max(axis=1)
    _, _, maxmin, pure = _pure_scan(G)
    values = maxmin.copy()
    rest = np.flatnonzero(~pure)
    if rest.size == 0:
        return values
    if m == 2 and n == 2:
        a, b = G[rest, 0, 0], G[rest, 0, 1]
        c, d = G[rest, 1, 0], G[rest, 1, 1]
        values[rest] = (a * d - b * c) / (a + d - b - c)
        return values
    for k in rest:
        values[k] = lp_game(G[k])[0]
    return values


def solve_games(G):
    """Values and optimal mixed strategies of a batch of games.

    Returns (values (N,), p1 (N, m), p2 (N, n)).
    """
    G = np.asarray(G, dtype=np.float64)
    N, m, n = G.shape
    rowmin, colmax, maxmin, pure = _pure_scan(G)
    values = maxmin.copy()
    p1 = np.zeros((N, m))
    p2 = np.zeros((N, n))
    idx = np.flatnonzero(pure)
    p1[idx, rowmin[idx].argmax(axis=1)] = 1.0
    p2[idx, colmax[idx].argmin(axis=1)] = 1.0
    rest = np.flatnonzero(~pure)
    if rest.size and m == 2 and n == 2:
        a, b = G[rest, 0, 0], G[rest, 0, 1]
        c, d = G[rest, 1, 0], G[rest, 1, 1]
        den = a + d - b - c
        values[rest] = (a * d - b * c) / den
        p1[rest, 0] = (d - c) / den
        p1[rest, 1] = (a - b) / den
        p2[rest, 0] = (d - b) / den
        p2[rest, 1] = (a - c) / den
        return values, p1, p2
    for k in rest:
        values[k], p1[k], p2[k], _ = lp_game(G[k])
    return values, p1, p2
