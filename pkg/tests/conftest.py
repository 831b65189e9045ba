import numpy as np
import pytest

from ergodic_games import ergodic_solver as es
from ergodic_games.grid_fd import Grid
from ergodic_games.registry import get_problem


@pytest.fixture(scope="session")
def ou():
    return get_problem("ou1d")


@pytest.fixture(scope="session")
def ou_game():
    return get_problem("ou-game-1d")


@pytest.fixture(scope="session")
def grid241():
    return Grid(1, 6.0, 241)


@pytest.fixture(scope="session")
def ou_rvi(ou, grid241):
    return es.rvi_solve(ou, grid241, t_end=20.0)


@pytest.fixture(scope="session")
def game_rvi(ou_game, grid241):
    return es.rvi_solve(ou_game, grid241, t_end=20.0)


@pytest.fixture(scope="session")
def ou_vd(ou, grid241):
    return es.vanishing_discount(ou, grid241.with_boundary("dirichlet_zero"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
