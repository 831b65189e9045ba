"""Numerical solvers for ergodic zero-sum stochastic differential games."""

__version__ = "0.1.0"

from ergodic_games.kernels import BACKEND
from ergodic_games.errors import (
    CertificateViolationError,
    ConfigurationError,
    ConvergenceError,
    DivergenceError,
    ErgodicGamesError,
    InvalidInputError,
    MonotonicityError,
)
from ergodic_games.problem import (
    ControlSet,
    FlatnessCertificate,
    GameProblem,
    LyapunovCertificate,
    check_flatness,
    check_lyapunov,
    constant_sigma,
)
from ergodic_games.grid_fd import Discretization, Grid, ValueField
from ergodic_games.matrix_game import GameSolution, MixedStrategy, fictitious_play, solve_matrix_game
from ergodic_games.ergodic_solver import (
    ErgodicSolution,
    SolveReport,
    StrategyField,
    check_contraction,
    check_lemma33,
    rvi_march,
    rvi_solve,
    solve_discounted,
    vanishing_discount,
    vi_march,
)
from ergodic_games.risk_sensitive import (
    RiskProblem,
    compute_adversary_ball,
    rvi_multiplicative,
    solve_risk_game,
)
from ergodic_games.registry import get_problem

__all__ = [
    "BACKEND", "CertificateViolationError", "ConfigurationError", "ConvergenceError",
    "ControlSet", "Discretization", "DivergenceError", "ErgodicGamesError", "ErgodicSolution",
    "FlatnessCertificate", "GameProblem", "GameSolution", "Grid", "InvalidInputError",
    "LyapunovCertificate", "MixedStrategy", "MonotonicityError", "RiskProblem", "SolveReport",
    "StrategyField", "ValueField", "check_contraction", "check_flatness", "check_lemma33",
    "check_lyapunov", "compute_adversary_ball", "constant_sigma", "fictitious_play",
    "get_problem", "rvi_march", "rvi_multiplicative", "rvi_solve", "solve_discounted",
    "solve_matrix_game", "solve_risk_game", "vanishing_discount", "vi_march",
]
