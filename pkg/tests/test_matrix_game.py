import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ergodic_games.errors import InvalidInputError
from ergodic_games.matrix_game import (
    MixedStrategy,
    duality_gap,
    fictitious_play,
    solve_matrix_game,
)


def test_one_by_one():
    sol = solve_matrix_game([[2.5]])
    assert sol.value == 2.5
    assert sol.v1.weights.tolist() == [1.0] and sol.v2.weights.tolist() == [1.0]


def test_matching_pennies():
    sol = solve_matrix_game([[1, -1], [-1, 1]])
    assert abs(sol.value) < 1e-12
    np.testing.assert_allclose(sol.v1.weights, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(sol.v2.weights, [0.5, 0.5], atol=1e-12)


def test_worked_3_1_0_2():
    sol = solve_matrix_game([[3, 1], [0, 2]])
    assert sol.value == pytest.approx(1.5, abs=1e-12)
    np.testing.assert_allclose(sol.v1.weights, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(sol.v2.weights, [0.25, 0.75], atol=1e-12)


def test_pure_saddle_detected():
    G = np.array([[4.0, 5.0, 6.0], [1.0, 9.0, 0.0], [3.0, 2.0, 8.0]])
    sol = solve_matrix_game(G)
    assert sol.value == 4.0
    assert sol.v1.weights.tolist() == [1.0, 0.0, 0.0]
    assert sol.v2.weights.tolist() == [1.0, 0.0, 0.0]


def test_rock_paper_scissors():
    G = np.array([[0, -1, 1], [1, 0, -1], [-1, 1, 0]], dtype=float)
    sol = solve_matrix_game(G)
    assert abs(sol.value) < 1e-12
    np.testing.assert_allclose(sol.v1.weights, np.full(3, 1 / 3), atol=1e-12)


def test_rectangular_games():
    # 2x3: columns 2 and 3 bind (4p = 3 - p at p = 0.6), column 1 is slack
    G = np.array([[1.0, 4.0, 2.0], [5.0, 0.0, 3.0]])
    sol = solve_matrix_game(G)
    assert sol.gap <= 1e-12
    assert min(G.min(), 0) <= sol.value <= G.max()
    assert sol.value == pytest.approx(2.4, abs=1e-12)
    np.testing.assert_allclose(sol.v1.weights, [0.6, 0.4], atol=1e-12)
    assert sol.v2.weights[0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("bad", [[[np.nan, 1.0]], [[np.inf]], [[]]])
def test_rejects_bad_matrices(bad):
    with pytest.raises(InvalidInputError):
        solve_matrix_game(bad)


def test_mixed_strategy_validation():
    with pytest.raises(InvalidInputError):
        MixedStrategy([0.5, 0.6])
    with pytest.raises(InvalidInputError):
        MixedStrategy([1.2, -0.2])
    assert MixedStrategy.pure(1, 3).weights.tolist() == [0.0, 1.0, 0.0]
    assert len(MixedStrategy.uniform(4)) == 4


def test_fictitious_play_examples():
    assert fictitious_play([[7.0]], 1).value == 7.0
    fp = fictitious_play([[1, -1], [-1, 1]], 100_000)
    assert abs(fp.value) < 1e-2
    fp = fictitious_play([[3, 1], [0, 2]], 1_000_000, tol=1e-3)
    assert abs(fp.value - 1.5) < 1e-2


def test_fictitious_play_bracket_contains_lp_value(rng):
    for _ in range(20):
        G = rng.normal(size=(5, 5))
        fp = fictitious_play(G, 20_000)
        lp = solve_matrix_game(G)
        assert fp.value - fp.gap / 2 - 1e-12 <= lp.value <= fp.value + fp.gap / 2 + 1e-12


finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


@st.composite
def matrices(draw, max_side=8):
    m = draw(st.integers(1, max_side))
    n = draw(st.integers(1, max_side))
    return draw(arrays(np.float64, (m, n), elements=finite))


@settings(max_examples=150, deadline=None)
@given(G=matrices())
def test_optimality_certificate(G):
    sol = solve_matrix_game(G)
    scale = max(np.abs(G).max(), 1.0)
    assert G.min() <= sol.value <= G.max()
    assert np.max(G @ sol.v2.weights) <= sol.value + 1e-9 * scale
    assert np.min(sol.v1.weights @ G) >= sol.value - 1e-9 * scale
    assert 0 <= sol.gap <= 1e-9 * scale


@settings(max_examples=100, deadline=None)
@given(G=matrices(6), c=st.floats(-50, 50), lam=st.floats(0.01, 100))
def test_shift_and_scale_equivariance(G, c, lam):
    base = solve_matrix_game(G)
    shifted = solve_matrix_game(G + c)
    scaled = solve_matrix_game(lam * G)
    scale = max(np.abs(G).max(), abs(c), 1.0)
    assert shifted.value == pytest.approx(base.value + c, abs=1e-9 * scale)
    assert scaled.value == pytest.approx(lam * base.value, abs=1e-9 * scale * lam)
    # strategies for G stay optimal for G + c
    assert duality_gap(G + c, base.v1.weights, base.v2.weights) <= 1e-9 * scale


@settings(max_examples=60, deadline=None)
@given(A=matrices(7))
def test_antisymmetric_value_zero(A):
    k = min(A.shape)
    A = A[:k, :k]
    G = A - A.T
    assert abs(solve_matrix_game(G).value) <= 1e-9 * max(np.abs(G).max(), 1.0)


def test_transpose_duality(rng):
    # value(G) = -value(-G^T): swapping roles and signs
    for _ in range(50):
        G = rng.normal(size=rng.integers(1, 7, size=2))
        assert solve_matrix_game(G).value == pytest.approx(-solve_matrix_game(-G.T).value, abs=1e-10)
