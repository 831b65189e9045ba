"""Zero-sum matrix games over mixed strategies.

Convention: the row player (player 1) maximizes, the column player
(player 2) minimizes ``p1 @ G @ p2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ergodic_games import kernels
from ergodic_games.errors import ConvergenceError, InvalidInputError

SIMPLEX_ATOL = 1e-12
DEFAULT_GAP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MixedStrategy:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > SIMPLEX_ATOL:
            raise InvalidInputError(f"not a probability vector: {w}")
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.size

    @classmethod
    def pure(cls, index, size):
        w = np.zeros(size)
        w[index] = 1.0
        return cls(w)

    @classmethod
    def uniform(cls, size):
        return cls(np.full(size, 1.0 / size))


@dataclass(frozen=True, eq=False)
class GameSolution:
    value: float
    v1: MixedStrategy
    v2: MixedStrategy
    gap: float


def _as_matrix(G):
    G = np.atleast_2d(np.asarray(G, dtype=np.float64))
    if G.ndim != 2 or G.size == 0:
        raise InvalidInputError("payoff matrix must be a nonempty 2-D array")
    if not np.all(np.isfinite(G)):
        raise InvalidInputError("payoff matrix has non-finite entries")
    return G


def duality_gap(G, p1, p2):
    """max_i (G p2)_i - min_j (p1^T G)_j; zero exactly at a saddle point."""
    return float(np.max(G @ p2) - np.min(p1 @ G))


def solve_matrix_game(G, tol=DEFAULT_GAP_TOL) -> GameSolution:
    """Exact game value and optimal mixed strategies.

    A pure-strategy saddle point is returned directly when one exists;
    otherwise the value LP is solved by dense simplex with Bland's rule.
    The relative duality gap must not exceed ``tol``.
    """
    G = _as_matrix(G)
    values, p1, p2 = kernels.solve_games(G[None])
    value = float(np.clip(values[0], G.min(), G.max()))
    gap = max(0.0, duality_gap(G, p1[0], p2[0]))
    scale = float(np.abs(G).max()) or 1.0
    if gap > tol * scale:
        raise ConvergenceError(f"duality gap {gap:.3e} exceeds tolerance", where="matrix_game")
    return GameSolution(value, MixedStrategy(p1[0]), MixedStrategy(p2[0]), gap)


def fictitious_play(G, iters: int, tol: float | None = None) -> GameSolution:
    """Brown-Robinson fictitious play; a test oracle independent of the LP.

    Each round both players best-respond to the opponent's empirical mixture.
    The reported value is the midpoint of the certified bracket
    ``min_j (p1^T G)_j <= value <= max_i (G p2)_i``; with ``tol`` given the
    run stops early once that bracket is narrower than ``tol``.
    """
    G = _as_matrix(G)
    if iters < 1:
        raise InvalidInputError("iters must be >= 1")
    m, n = G.shape
    counts1 = np.zeros(m)
    counts2 = np.zeros(n)
    row_payoff = np.zeros(m)  # G @ counts2
    col_payoff = np.zeros(n)  # counts1 @ G
    i = int(np.argmax(G.min(axis=1)))
    j = int(np.argmin(G.max(axis=0)))
    done = 0
    for done in range(1, iters + 1):
        counts1[i] += 1
        counts2[j] += 1
        row_payoff += G[:, j]
        col_payoff += G[i]
        i = int(np.argmax(row_payoff))
        j = int(np.argmin(col_payoff))
        if tol is not None and done % 64 == 0:
            if (row_payoff[i] - col_payoff[j]) / done <= tol:
                break
    upper = row_payoff.max() / done
    lower = col_payoff.min() / done
    return GameSolution(
        0.5 * (upper + lower),
        MixedStrategy(counts1 / done),
        MixedStrategy(counts2 / done),
        max(0.0, upper - lower),
    )
