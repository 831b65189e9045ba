"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
printed even when output capture is on.
"""

import json

import numpy as np
import pytest

from ergodic_games import ergodic_solver as es
from ergodic_games import sim_mc
from ergodic_games.cli import main as cli_main
from ergodic_games.ergodic_solver import StrategyField
from ergodic_games.grid_fd import Discretization, Grid
from ergodic_games.matrix_game import duality_gap, fictitious_play, solve_matrix_game
from ergodic_games.problem import FlatnessCertificate
from ergodic_games.registry import get_problem, ou1d, risk_ou_1d
from ergodic_games.risk_sensitive import compute_adversary_ball, rvi_multiplicative, solve_risk_game
from ergodic_games.sim_mc import SimConfig

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def report(label, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        assert ok, f"{label}: {detail}"

    return report


def core_sup(grid, values, oracle):
    core = grid.core_mask
    return float(np.max(np.abs(values - oracle)[core])), float(np.max(np.abs(oracle[core])))


def test_c1_ou_rvi(verdict, ou_rvi, grid241):
    x = grid241.nodes[:, 0]
    err, scale = core_sup(grid241, ou_rvi.phi_star.values, x**2 / 2)
    beta_ok = abs(ou_rvi.beta - 1.0) <= 0.02
    verdict("C1 OU ergodic RVI", beta_ok and err <= 0.02 * scale,
            f"beta={ou_rvi.beta:.6f} (|err| {abs(ou_rvi.beta - 1):.2e} <= 0.02), "
            f"bias core sup err {err:.2e} <= {0.02 * scale:.3e}")


def test_c2_vanishing_discount(verdict, ou_vd, ou_rvi):
    worst = max(abs(r["beta_hat"] / (2 / (r["alpha"] + 2)) - 1) for r in ou_vd.report.details["trend"])
    gap = abs(ou_rvi.beta - ou_vd.beta)
    verdict("C2 vanishing-discount trend", worst <= 0.02 and gap <= 0.01,
            f"worst relative trend error {worst:.2e} <= 0.02, |beta_rvi - beta_vd| = {gap:.2e} <= 0.01")


def test_c3_rvi_vi_identities(verdict, ou, grid241):
    rep = es.check_lemma33(ou, grid241, np.zeros(grid241.size), 1.0, dt=1e-4, t_end=5.0,
                           checkpoints=[0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0], tol=5e-3)
    m = rep.metrics
    verdict("C3 RVI/VI identities", m["identity1_max"] <= 5e-3 and m["identity2_max"] <= 5e-3,
            f"identity residuals {m['identity1_max']:.2e}, {m['identity2_max']:.2e} <= 5e-3")


def test_c4_matrix_games(verdict):
    rng = np.random.default_rng(2024)
    worst_gap = worst_fp = worst_eq = 0.0
    for _ in range(200):
        m, n = rng.integers(1, 21, size=2)
        G = rng.uniform(-1.0, 1.0, size=(m, n))
        sol = solve_matrix_game(G)
        worst_gap = max(worst_gap, duality_gap(G, sol.v1.weights, sol.v2.weights))
        # stopping on a bracket below 2e-2 certifies the midpoint within 1e-2
        fp = fictitious_play(G, 500_000, tol=1.9e-2)
        worst_fp = max(worst_fp, abs(fp.value - sol.value))
        a, b = rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0)
        moved = solve_matrix_game(a * G + b)
        worst_eq = max(worst_eq, abs(moved.value - (a * sol.value + b)))
    worked = [([[3.0, 1.0], [0.0, 2.0]], 1.5), ([[1.0, -1.0], [-1.0, 1.0]], 0.0), ([[2.5]], 2.5)]
    worked_err = max(abs(solve_matrix_game(G).value - v) for G, v in worked)
    ok = worst_gap <= 1e-9 and worst_fp <= 1e-2 and worst_eq <= 1e-12 and worked_err <= 1e-12
    verdict("C4 matrix-game suite", ok,
            f"gap {worst_gap:.1e} <= 1e-9, LP vs FP {worst_fp:.1e} <= 1e-2, "
            f"equivariance {worst_eq:.1e} <= 1e-12, worked examples {worked_err:.1e}")


def test_c5_risk_sensitive(verdict):
    grid = Grid(1, 7.0, 401)
    problem = risk_ou_1d(radius=7.0)
    sol = solve_risk_game(problem, grid, t_end=20.0)
    x = grid.nodes[:, 0]
    err, scale = core_sup(grid, sol.phi_star.values, x**2 / 8)
    psi, rep = rvi_multiplicative(problem, grid, t_end=20.0)
    predicted = np.exp(sol.beta + sol.phi_star.values)
    rel = float(np.max(np.abs(psi.values / predicted - 1)[grid.core_mask]))
    ok = abs(sol.beta - 0.25) <= 0.05 * 0.25 and err <= 0.05 * scale and rel <= 5e-3
    verdict("C5 risk-sensitive OU", ok,
            f"beta={sol.beta:.5f} within 5% of 0.25, bias core err {err:.2e} <= {0.05 * scale:.2e}, "
            f"multiplicative vs exp(beta + phi) core rel err {rel:.2e} <= 5e-3")


def test_c6_adversary_constants(verdict):
    rng = np.random.default_rng(6)
    exact_err = 0.0
    for _ in range(100):
        c, lip_h, s = rng.uniform(0.1, 3.0, size=3)
        ball = compute_adversary_ball(FlatnessCertificate([[1.0]], c=c, lip_h=lip_h, lip_ainv=0.0, sigma_sup=s))
        exact_err = max(exact_err, abs(ball.K - lip_h * s / c**1.25) / (lip_h * s / c**1.25))
    resid = 0.0
    for _ in range(100):
        c, s = rng.uniform(0.5, 3.0, size=2)
        lip_ainv = rng.uniform(0.01, 1.0)
        # keep the constant flatness condition 2 s^2 lip_h lip_ainv <= c^2
        lip_h = rng.uniform(0.0, 1.0) * c * c / (2 * s * s * lip_ainv)
        ball = compute_adversary_ball(FlatnessCertificate([[1.0]], c=c, lip_h=lip_h, lip_ainv=lip_ainv, sigma_sup=s))
        qa, qb, qc = ball.coefficients
        resid = max(resid, abs(qa * ball.K**2 + qb * ball.K + qc))
    verdict("C6 adversary-ball constants", exact_err <= 4 * np.finfo(float).eps and resid <= 1e-10,
            f"degenerate-case K relative error {exact_err:.1e}, root residual {resid:.1e} <= 1e-10")


def _mc_beta(problem, grid, x0, n_paths, dt_sim, seed):
    sol = es.rvi_solve(problem, grid, t_end=20.0)
    cfg = SimConfig(dt_sim=dt_sim, horizon=20.0, n_paths=n_paths, seed=seed)
    est = sim_mc.estimate_beta(problem, sol.selectors, cfg, x0)
    return sol, est


def test_c7_monte_carlo(verdict, ou_rvi, game_rvi, ou_game, grid241):
    lines, ok = [], True
    checks = [("ou1d", ou1d(), ou_rvi, [0.0]), ("ou-game-1d", ou_game, game_rvi, [0.0])]
    cfg = SimConfig(dt_sim=2e-3, horizon=20.0, n_paths=1000, seed=7)
    for name, problem, sol, x0 in checks:
        est = sim_mc.estimate_beta(problem, sol.selectors, cfg, x0)
        tol = max(est.half_width, 0.03 * sol.beta)
        good = abs(est.mean - sol.beta) <= tol
        ok &= good
        lines.append(f"{name} beta mc {est.mean:.4f} vs {sol.beta:.4f} (tol {tol:.3f})")
    g2 = Grid(2, 5.0, 41)
    sol2, est2 = _mc_beta(get_problem("ou2d"), g2, [0.0, 0.0], 1000, 2e-3, 7)
    tol2 = max(est2.half_width, 0.03 * sol2.beta)
    ok &= abs(est2.mean - sol2.beta) <= tol2
    lines.append(f"ou2d beta mc {est2.mean:.4f} vs {sol2.beta:.4f} (tol {tol2:.3f})")
    bias_cfg = SimConfig(dt_sim=2e-3, horizon=15.0, n_paths=1000, seed=8)
    for name, problem, sol, _ in checks:
        b = sim_mc.estimate_bias(problem, sol.selectors, bias_cfg, [1.5], sol.beta, 0.05, phi_grid=sol.phi_star)
        ref = b.details["grid_phi"]
        tol = max(b.half_width, 0.05 * abs(ref))
        ok &= abs(b.mean - ref) <= tol and not b.details["flagged"]
        lines.append(f"{name} bias(1.5) mc {b.mean:.4f} vs grid {ref:.4f} (tol {tol:.3f})")
    drift = sim_mc.check_drift_bound(ou1d(), ou_rvi.selectors, SimConfig(dt_sim=2e-3, horizon=5.0, n_paths=1000, seed=9),
                                     [3.0], checkpoints=[0.0, 0.5, 1.0, 2.0, 5.0])
    ok &= drift.passed
    lines.append(f"drift bound worst margin {drift.metrics['worst_margin']:.3f}")
    verdict("C7 Monte Carlo cross-validation", ok, "; ".join(lines))


def test_c8_structural(verdict, ou, ou_game, grid241, ou_rvi, tmp_path):
    failures = []
    for name in ("ou1d", "ou-game-1d", "ou2d"):
        p = get_problem(name)
        grid = grid241 if p.dim == 1 else Grid(2, 5.0, 41)
        for boundary in ("one_sided", "dirichlet_zero"):
            d = Discretization(p, grid.with_boundary(boundary))
            if d.w.min() < 0 or np.max(np.abs(d.diag + d.w.sum(axis=2))) > 1e-9 * d.max_rate():
                failures.append(f"stencil {name}/{boundary}")
    h = 0.05
    small = Grid(1, 4.0, int(round(8 / h)) + 1, boundary="dirichlet_zero")
    big = Grid(1, 6.0, int(round(12 / h)) + 1, boundary="dirichlet_zero")
    for alpha in (1.0, 0.1, 0.01):
        vs = es.solve_discounted(ou_game, small, alpha).value.values
        vb = es.solve_discounted(ou_game, big, alpha).value.values
        if vs.min() < 0 or vb.min() < 0:
            failures.append(f"psi negative at alpha={alpha}")
        if np.any(vs > vb[big.locate(small.nodes)] + 1e-9):
            failures.append(f"radius monotonicity at alpha={alpha}")
    shifted = es.rvi_solve(ou1d(shift=0.5), grid241, t_end=20.0)
    if abs(shifted.beta - ou_rvi.beta - 0.5) > 1e-6 or np.max(np.abs(shifted.phi_star.values - ou_rvi.phi_star.values)) > 1e-6:
        failures.append("payoff shift")
    cfg = SimConfig(dt_sim=1e-2, horizon=2.0, n_paths=64, seed=3)
    a = sim_mc.simulate_paths(ou1d(), ou_rvi.selectors, cfg, [0.5])
    b = sim_mc.simulate_paths(ou1d(), ou_rvi.selectors, SimConfig(**{**cfg.to_dict(), "block_paths": 5, "workers": 2}), [0.5])
    if not (np.array_equal(a.final_state, b.final_state) and np.array_equal(a.payoff_batches, b.payoff_batches)):
        failures.append("seed determinism")
    run_a, run_b = tmp_path / "a", tmp_path / "b"
    args = ["solve", "--problem", "ou-game-1d", "--method", "rvi", "--radius", "5", "--n", "101"]
    cli_main(args + ["--out", str(run_a)])
    cli_main(["solve", "--manifest", str(run_a / "manifest.json"), "--out", str(run_b)])
    for f in ("value_field.csv", "strategies.csv", "residuals.csv"):
        if (run_a / f).read_bytes() != (run_b / f).read_bytes():
            failures.append(f"manifest round trip {f}")
    if json.loads((run_a / "report.json").read_text())["beta"] != json.loads((run_b / "report.json").read_text())["beta"]:
        failures.append("manifest round trip beta")
    verdict("C8 structural properties", not failures, "zero violations" if not failures else ", ".join(failures))


def test_game_benchmark(verdict, ou_game, game_rvi, grid241):
    vd = es.vanishing_discount(ou_game, grid241.with_boundary("dirichlet_zero"))
    gap = abs(vd.beta - game_rvi.beta)
    resid = game_rvi.report.details["elliptic_residual"]
    cfg = SimConfig(dt_sim=2e-3, horizon=20.0, n_paths=500, seed=10)
    eq = sim_mc.estimate_beta(ou_game, game_rvi.selectors, cfg, [0.0])
    n = grid241.size
    sel = game_rvi.selectors
    worst = -np.inf
    for k in range(2):
        pure = np.tile(np.eye(2)[k], (n, 1))
        up = sim_mc.estimate_beta(ou_game, StrategyField(grid241, pure, sel.p2), cfg, [0.0])
        worst = max(worst, up.mean - eq.mean - (up.half_width + eq.half_width))
        down = sim_mc.estimate_beta(ou_game, StrategyField(grid241, sel.p1, pure), cfg, [0.0])
        worst = max(worst, eq.mean - down.mean - (down.half_width + eq.half_width))
    ok = gap <= 0.01 and resid <= 1e-3 and worst <= 0.0
    verdict("Game benchmark ou-game-1d", ok,
            f"|beta_rvi - beta_vd| = {gap:.2e} <= 0.01, elliptic residual {resid:.1e} <= 1e-3, "
            f"largest deviation gain beyond CI {worst:.3f} <= 0")
