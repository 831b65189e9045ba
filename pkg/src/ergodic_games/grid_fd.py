"""Truncated rectangular grids and the monotone discretization of the generator.

Node ordering is row-major with axis 0 fastest: flat = i0 + n * i1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ergodic_games import kernels
from ergodic_games.errors import InvalidInputError, MonotonicityError

BOUNDARY_POLICIES = ("dirichlet_zero", "one_sided")
SCHEMES = ("hybrid", "upwind")


@dataclass(frozen=True)
class Grid:
    dim: int
    radius: float
    n: int
    boundary: str = "one_sided"
    core_fraction: float = 0.8

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise InvalidInputError("only dim 1 and 2 are supported")
        if self.n < 3 or self.n % 2 == 0:
            raise InvalidInputError(f"n must be odd and >= 3, got {self.n}")
        if not self.radius > 0:
            raise InvalidInputError("radius must be positive")
        if self.boundary not in BOUNDARY_POLICIES:
            raise InvalidInputError(f"unknown boundary policy {self.boundary!r}")
        if not 0 < self.core_fraction <= 1:
            raise InvalidInputError("core_fraction must lie in (0, 1]")

    @property
    def spacing(self) -> float:
        return 2.0 * self.radius / (self.n - 1)

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def shape(self):
        return (self.n,) * self.dim

    @cached_property
    def axis(self):
        # built from integer offsets so the origin is exactly 0 and the axis symmetric
        mid = (self.n - 1) // 2
        return self.spacing * (np.arange(self.n) - mid)

    @cached_property
    def multi_index(self):
        """(N, dim) integer coordinates in flat order."""
        idx = np.indices(self.shape).reshape(self.dim, -1, order="F").T
        return np.ascontiguousarray(idx)

    @cached_property
    def nodes(self):
        return self.axis[self.multi_index]

    def flat_index(self, multi):
        multi = np.asarray(multi)
        return int(sum(int(multi[k]) * self.n**k for k in range(self.dim)))

    def node_index(self, node):
        """Accepts a flat index or a per-axis multi-index."""
        if np.ndim(node) == 0:
            k = int(node)
            if not 0 <= k < self.size:
                raise InvalidInputError(f"node {k} outside grid")
            return k
        return self.flat_index(node)

    @cached_property
    def origin_index(self) -> int:
        return self.flat_index([(self.n - 1) // 2] * self.dim)

    @cached_property
    def boundary_mask(self):
        mi = self.multi_index
        return np.any((mi == 0) | (mi == self.n - 1), axis=1)

    @cached_property
    def core_mask(self):
        lim = self.core_fraction * self.radius * (1 + 1e-12)
        return np.all(np.abs(self.nodes) <= lim, axis=1)

    def locate(self, x):
        """Nearest node for each point (points outside are clipped)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mid = (self.n - 1) // 2
        i = np.clip(np.rint(x / self.spacing) + mid, 0, self.n - 1).astype(np.int64)
        return i @ (self.n ** np.arange(self.dim))

    @cached_property
    def neighbors(self):
        """(N, S) flat neighbor indices; missing neighbors point at the node itself."""
        offsets = stencil_offsets(self.dim)
        mi = self.multi_index
        target = mi[:, None, :] + offsets[None, :, :]
        ok = np.all((target >= 0) & (target < self.n), axis=2)
        flat = (np.clip(target, 0, self.n - 1) * (self.n ** np.arange(self.dim))).sum(axis=2)
        self_idx = np.arange(self.size)[:, None]
        return np.ascontiguousarray(np.where(ok, flat, self_idx).astype(np.int64))

    def to_dict(self):
        return {
            "dim": self.dim,
            "radius": self.radius,
            "n": self.n,
            "boundary": self.boundary,
            "core_fraction": self.core_fraction,
        }

    def with_boundary(self, boundary):
        return Grid(self.dim, self.radius, self.n, boundary, self.core_fraction)


def stencil_offsets(dim):
    if dim == 1:
        return np.array([[1], [-1]])
    return np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1], [1, -1], [-1, 1]])


@dataclass(eq=False)
class ValueField:
    grid: Grid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size != self.grid.size:
            raise InvalidInputError(f"field has {v.size} values, grid has {self.grid.size} nodes")
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise InvalidInputError("field has non-finite values", where=f"node {bad}")
        self.values = v

    @property
    def origin_value(self) -> float:
        return float(self.values[self.grid.origin_index])

    def normalized(self):
        """Copy pinned to zero at the origin node."""
        return ValueField(self.grid, self.values - self.origin_value, dict(self.meta))

    def to_csv(self, path):
        write_node_csv(path, self.grid, {"value": self.values})

    @classmethod
    def from_csv(cls, path, grid, meta=None):
        cols = read_node_csv(path, grid)
        return cls(grid, cols["value"], dict(meta or {}))


def write_node_csv(path, grid, columns):
    """Node coordinates followed by the given columns, shortest round-trip floats."""
    names = [f"x{k}" for k in range(grid.dim)] + list(columns)
    data = [grid.nodes[:, k] for k in range(grid.dim)] + [np.asarray(c) for c in columns.values()]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*data):
            w.writerow([repr(float(v)) for v in row])


def read_node_csv(path, grid=None):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    arr = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
    cols = {name: arr[:, k] for k, name in enumerate(header)}
    if grid is not None:
        coords = np.column_stack([cols[f"x{k}"] for k in range(grid.dim)])
        if coords.shape != grid.nodes.shape or not np.allclose(coords, grid.nodes, atol=1e-12):
            raise InvalidInputError(f"{path}: node coordinates do not match the grid")
    return cols


def build_weights(grid: Grid, node_idx, drift, a, scheme="hybrid"):
    """Positive-type stencil weights at selected nodes.

    drift: (P, K, d) for K = len(node_idx); a: (K, d, d).
    Returns w (P, K, S) >= 0 and diag (P, K) = -sum(w).
    """
    if scheme not in SCHEMES:
        raise InvalidInputError(f"unknown drift scheme {scheme!r}")
    node_idx = np.asarray(node_idx, dtype=np.int64)
    drift = np.asarray(drift, dtype=np.float64)
    P, K, d = drift.shape
    h = grid.spacing
    S = 2 * d + (4 if d == 2 else 0)
    w = np.zeros((P, K, S))
    mi = grid.multi_index[node_idx]
    lo = mi == 0
    hi = mi == grid.n - 1
    on_boundary = np.any(lo | hi, axis=1)
    dirichlet = grid.boundary == "dirichlet_zero"
    active = ~on_boundary if dirichlet else np.ones(K, dtype=bool)

    if d == 2:
        a12 = a[:, 0, 1]
        interior = ~on_boundary
        bad = interior & (np.minimum(a[:, 0, 0], a[:, 1, 1]) < np.abs(a12) - 1e-14)
        if bad.any():
            k = int(node_idx[np.flatnonzero(bad)[0]])
            raise MonotonicityError(
                "a(x) is not diagonally dominant; cross-derivative stencil would not be positive",
                where=f"grid_fd: node {k}, x={grid.nodes[k].tolist()}",
            )
        cross = np.where(interior, np.abs(a12), 0.0)
    else:
        cross = np.zeros(K)

    for k in range(d):
        bk = drift[:, :, k]
        bplus = np.maximum(bk, 0.0)
        bminus = np.maximum(-bk, 0.0)
        edge = lo[:, k] | hi[:, k]
        second = np.where(edge, 0.0, (a[:, k, k] - cross) / (2 * h * h))
        if scheme == "hybrid":
            centered = (second >= np.abs(bk) / (2 * h)) & ~edge
        else:
            centered = np.zeros_like(bk, dtype=bool)
        wp = np.where(centered, bk / (2 * h), bplus / h) + second
        wm = np.where(centered, -bk / (2 * h), bminus / h) + second
        # one-sided boundary: keep only the inward drift component
        wp = np.where(hi[:, k], 0.0, wp)
        wm = np.where(lo[:, k], 0.0, wm)
        w[:, :, 2 * k] = wp
        w[:, :, 2 * k + 1] = wm

    if d == 2:
        a12 = a[:, 0, 1]
        c = cross / (2 * h * h)
        pos = a12 >= 0
        w[:, :, 4] = np.where(pos, c, 0.0)
        w[:, :, 5] = np.where(pos, c, 0.0)
        w[:, :, 6] = np.where(pos, 0.0, c)
        w[:, :, 7] = np.where(pos, 0.0, c)

    w[:, ~active, :] = 0.0
    w = np.ascontiguousarray(w)
    diag = np.ascontiguousarray(-w.sum(axis=2))
    return w, diag


class Discretization:
    """Tabulated coefficients and stencils of a game problem on a grid.

    Control pairs are flattened as ``p = i * m2 + j``.
    """

    def __init__(self, problem, grid: Grid, scheme="hybrid"):
        if problem.dim != grid.dim:
            raise InvalidInputError(f"problem dim {problem.dim} != grid dim {grid.dim}")
        self.problem = problem
        self.grid = grid
        self.scheme = scheme
        x = grid.nodes
        problem.validate(x)
        self.m1, self.m2 = problem.shape
        N = grid.size
        self.a = problem.diffusion(x)
        drift = problem.drift_table(x)  # (N, m1, m2, d)
        self.drift = np.ascontiguousarray(
            np.moveaxis(drift.reshape(N, self.m1 * self.m2, grid.dim), 1, 0)
        )
        self.payoff = np.ascontiguousarray(problem.payoff_table(x).reshape(N, -1).T)  # (P, N)
        self.nbr = grid.neighbors
        self.w, self.diag = build_weights(grid, np.arange(N), self.drift, self.a, scheme)
        self.active = ~grid.boundary_mask if grid.boundary == "dirichlet_zero" else np.ones(N, bool)

    @property
    def n_pairs(self):
        return self.m1 * self.m2

    def generator(self, f):
        """Discrete generator applied to f for every control pair: (P, N)."""
        f = np.ascontiguousarray(f, dtype=np.float64)
        return kernels.stencil_apply(f, self.nbr, self.w, self.diag)

    def hamiltonian(self, f):
        """Per-node payoff matrices G[k, i, j] = L f + h: (N, m1, m2)."""
        G = self.generator(f) + self.payoff
        return np.ascontiguousarray(G.T.reshape(-1, self.m1, self.m2))

    def max_rate(self):
        return float(self.w.sum(axis=2).max())

    def cfl_dt(self, extra_rate=1.0):
        """Largest explicit step keeping the update a sub-convex combination."""
        return 0.9 / (self.max_rate() + extra_rate)

    def policy_operator(self, p1, p2):
        """Sparse generator and payoff of the chain induced by mixed strategies.

        p1: (N, m1), p2: (N, m2).
        """
        joint = (p1[:, :, None] * p2[:, None, :]).reshape(len(p1), -1).T  # (P, N)
        weff = np.einsum("pk,pks->ks", joint, self.w)
        deff = np.einsum("pk,pk->k", joint, self.diag)
        reff = np.einsum("pk,pk->k", joint, self.payoff)
        N, S = weff.shape
        rows = np.concatenate([np.repeat(np.arange(N), S), np.arange(N)])
        cols = np.concatenate([self.nbr.ravel(), np.arange(N)])
        data = np.concatenate([weff.ravel(), deff])
        A = sp.csr_matrix((data, (rows, cols)), shape=(N, N))
        return A, reff

    def weights_at(self, node, pair):
        """(neighbor indices, off-diagonal weights, diagonal) at one node."""
        return self.nbr[node], self.w[pair, node], float(self.diag[pair, node])


def _single_pair_weights(grid, k, problem, u1, u2, scheme):
    x = grid.nodes[k:k + 1]
    b = np.broadcast_to(problem.drift(x, np.atleast_1d(u1), np.atleast_1d(u2)), (1, grid.dim))
    a = problem.diffusion(x)
    return build_weights(grid, [k], b[None].astype(np.float64), a, scheme)


def _check_node(grid, k):
    if grid.boundary == "dirichlet_zero" and grid.boundary_mask[k]:
        raise InvalidInputError(
            "generator not applicable at a Dirichlet boundary node (value fixed at 0)",
            where=f"grid_fd: node {k}",
        )


def apply_generator(grid: Grid, f, node, u1, u2, problem, scheme="hybrid") -> float:
    """Discrete controlled generator at one node for one pure control pair."""
    k = grid.node_index(node)
    _check_node(grid, k)
    values = f.values if isinstance(f, ValueField) else np.asarray(f, dtype=np.float64)
    w, diag = _single_pair_weights(grid, k, problem, u1, u2, scheme)
    return float(diag[0, 0] * values[k] + w[0, 0] @ values[grid.neighbors[k]])


def hamiltonian_matrix(grid: Grid, f, node, problem, scheme="hybrid"):
    """G[i, j] = L f(x, u1_i, u2_j) + h(x, u1_i, u2_j) at one node."""
    k = grid.node_index(node)
    _check_node(grid, k)
    values = f.values if isinstance(f, ValueField) else np.asarray(f, dtype=np.float64)
    x = grid.nodes[k:k + 1]
    h = problem.payoff_table(x)[0]
    G = np.empty(problem.shape)
    for i, u1 in enumerate(problem.u1.points):
        for j, u2 in enumerate(problem.u2.points):
            w, diag = _single_pair_weights(grid, k, problem, u1, u2, scheme)
            G[i, j] = diag[0, 0] * values[k] + w[0, 0] @ values[grid.neighbors[k]] + h[i, j]
    return G
