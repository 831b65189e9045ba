"""The compiled kernels and the numpy fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from ergodic_games import _kernels_py, kernels

_kernels_c = pytest.importorskip("ergodic_games._kernels")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


def test_pure_env_forces_fallback():
    code = "from ergodic_games import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, ERGODIC_GAMES_PURE="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("shape", [(50, 1, 1), (50, 1, 4), (50, 4, 1), (300, 2, 2), (200, 3, 5), (60, 20, 20)])
def test_game_values_agree(shape, rng):
    G = rng.normal(size=shape)
    G[::7] = np.round(G[::7])  # integer entries produce ties and degenerate pivots
    vp = _kernels_py.game_values(G)
    vc = _kernels_c.game_values(G)
    np.testing.assert_allclose(vc, vp, rtol=0, atol=1e-12)


def test_solve_games_agree(rng):
    G = rng.normal(size=(400, 6, 7))
    for a, b in zip(_kernels_py.solve_games(G), _kernels_c.solve_games(G)):
        np.testing.assert_array_equal(a, b)


def test_worked_example_both_backends():
    G = np.array([[[3.0, 1.0], [0.0, 2.0]]])
    for impl in (_kernels_py, _kernels_c):
        v, p1, p2 = impl.solve_games(G)
        assert v[0] == pytest.approx(1.5, abs=1e-14)
        np.testing.assert_allclose(p1[0], [0.5, 0.5], atol=1e-14)
        np.testing.assert_allclose(p2[0], [0.25, 0.75], atol=1e-14)


def test_stencil_apply_agrees(rng):
    N, S, P = 500, 8, 3
    f = rng.normal(size=N)
    nbr = rng.integers(0, N, size=(N, S)).astype(np.int64)
    w = rng.random((P, N, S))
    diag = -w.sum(axis=2)
    np.testing.assert_allclose(_kernels_c.stencil_apply(f, nbr, w, diag),
                               _kernels_py.stencil_apply(f, nbr, w, diag), rtol=1e-13, atol=1e-13)


def test_stencil_kills_constants(rng):
    N, S = 100, 2
    nbr = rng.integers(0, N, size=(N, S)).astype(np.int64)
    w = rng.random((2, N, S))
    out = _kernels_c.stencil_apply(np.full(N, 3.0), nbr, w, -w.sum(axis=2))
    assert np.max(np.abs(out)) < 1e-13
