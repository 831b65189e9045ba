"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Times the two hot kernels on realistic shapes (per-node games of the
two-player benchmark, generator application on 1-D and 2-D grids) and one
complete RVI march under each backend. Both backends are checked for
agreement before anything is timed.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from ergodic_games import _kernels_py

try:
    from ergodic_games import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def game_batch(n_games, m1, m2, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n_games, m1, m2))


def stencil_case(n_nodes, n_pairs, n_nbr, seed=0):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=n_nodes)
    nbr = rng.integers(0, n_nodes, size=(n_nodes, n_nbr)).astype(np.int64)
    w = rng.random((n_pairs, n_nodes, n_nbr))
    diag = -w.sum(axis=2)
    return f, nbr, w, diag


def kernel_rows(repeat):
    rows = []
    cases = [
        ("game_values 241x(2x2)", lambda k: k.game_values(game_batch(241, 2, 2))),
        ("game_values 2601x(3x3)", lambda k: k.game_values(game_batch(2601, 3, 3))),
        ("game_values 500x(8x8)", lambda k: k.game_values(game_batch(500, 8, 8))),
        ("solve_games 200x(20x20)", lambda k: k.solve_games(game_batch(200, 20, 20))),
        ("stencil_apply 1-D 241 nodes, 4 pairs", lambda k: k.stencil_apply(*stencil_case(241, 4, 2))),
        ("stencil_apply 2-D 101^2 nodes, 1 pair", lambda k: k.stencil_apply(*stencil_case(101 * 101, 1, 8))),
    ]
    for name, call in cases:
        if _kernels_c is not None:
            a, b = call(_kernels_py), call(_kernels_c)
            for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
                np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)
        t_py = best_of(lambda: call(_kernels_py), repeat)
        t_c = best_of(lambda: call(_kernels_c), repeat) if _kernels_c else float("nan")
        rows.append({"case": name, "python_s": t_py, "cython_s": t_c, "speedup": t_py / t_c})
    return rows


SOLVE_SNIPPET = """
import time, json
from ergodic_games import kernels, get_problem, Grid, rvi_solve
g = Grid(1, 6.0, 241)
t0 = time.perf_counter()
sol = rvi_solve(get_problem("ou-game-1d"), g, t_end=5.0)
print(json.dumps({"backend": kernels.BACKEND, "seconds": time.perf_counter() - t0, "beta": sol.beta}))
"""


def end_to_end():
    """RVI on the two-player game, once per backend (fresh interpreter each)."""
    out = []
    for pure in ("0", "1"):
        env = dict(os.environ, ERGODIC_GAMES_PURE=pure)
        res = subprocess.run([sys.executable, "-c", SOLVE_SNIPPET], env=env, check=True,
                             capture_output=True, text=True)
        out.append(json.loads(res.stdout.strip().splitlines()[-1]))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results here")
    ap.add_argument("--skip-solve", action="store_true")
    args = ap.parse_args()
    if _kernels_c is None:
        print("compiled extension not built; only the fallback will be timed")
    rows = kernel_rows(args.repeat)
    print(f"{'kernel':42s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}")
    for r in rows:
        print(f"{r['case']:42s} {r['python_s']:11.5f} {r['cython_s']:11.5f} {r['speedup']:8.1f}")
    result = {"kernels": rows}
    if not args.skip_solve:
        e2e = end_to_end()
        result["rvi_ou_game_1d"] = e2e
        for r in e2e:
            print(f"rvi ou-game-1d t_end=5 [{r['backend']:6s}]  {r['seconds']:.3f} s  beta={r['beta']:.8f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(result, fh, indent=2)


if __name__ == "__main__":
    main()
