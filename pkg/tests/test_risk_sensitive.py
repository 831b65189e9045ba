import numpy as np
import pytest

from ergodic_games.errors import CertificateViolationError, InvalidInputError
from ergodic_games.grid_fd import Grid
from ergodic_games.problem import ControlSet, FlatnessCertificate, constant_sigma
from ergodic_games.registry import risk_ou_1d
from ergodic_games.risk_sensitive import (
    AdversaryBall,
    RiskProblem,
    clip_to_ball,
    compute_adversary_ball,
    risk_hamiltonian,
    rvi_multiplicative,
    solve_risk_game,
)

SQRT2 = np.sqrt(2.0)


def exact(theta):
    k = (1 - np.sqrt(1 - 4 * theta)) / 4
    return 2 * k, k


def ou_risk(payoff, lip_h=0.0, c=0.5):
    cert = FlatnessCertificate(Q=[[1.0]], c=c, lip_h=lip_h, lip_ainv=0.0, sigma_sup=2.0)
    return RiskProblem(dim=1, drift=lambda x, u: -x, sigma=constant_sigma([[SQRT2]]),
                       payoff=payoff, controls=ControlSet.singleton(1), flatness=cert)


@pytest.fixture(scope="module")
def grid():
    return Grid(1, 6.0, 241)


@pytest.fixture(scope="module")
def risk_sol(grid):
    return solve_risk_game(risk_ou_1d(), grid, t_end=20.0)


@pytest.fixture(scope="module")
def mult():
    g = Grid(1, 7.0, 401)
    psi, rep = rvi_multiplicative(risk_ou_1d(radius=7.0), g, t_end=20.0)
    return g, psi, rep


class TestBall:
    def test_linear_case(self):
        b = compute_adversary_ball(FlatnessCertificate([[1.0]], c=2.0, lip_h=3.0, lip_ainv=0.0, sigma_sup=1.5))
        assert b.K == pytest.approx(3.0 * 1.5 / 2.0**1.25)
        assert b.radius == pytest.approx(1.5)

    def test_flat_payoff(self):
        b = compute_adversary_ball(FlatnessCertificate([[1.0]], c=1.0, lip_h=0.0, lip_ainv=0.7, sigma_sup=1.0))
        assert b.K == 0.0 and b.radius == 0.0

    def test_quadratic_root(self):
        b = compute_adversary_ball(FlatnessCertificate([[1.0]], c=1.0, lip_h=0.125, lip_ainv=1.0, sigma_sup=1.0))
        assert b.K == pytest.approx(1 - np.sqrt(0.75), rel=1e-14)
        qa, qb, qc = b.coefficients
        assert abs(qa * b.K**2 + qb * b.K + qc) < 1e-14
        assert b.radius == pytest.approx(0.125 + b.K**2 / 2)

    def test_tiny_lip_h_no_cancellation(self):
        b = compute_adversary_ball(FlatnessCertificate([[1.0]], c=1.0, lip_h=1e-12, lip_ainv=1.0, sigma_sup=1.0))
        assert b.K == pytest.approx(1e-12, rel=1e-9)

    def test_negative_discriminant(self):
        with pytest.raises(CertificateViolationError):
            compute_adversary_ball(FlatnessCertificate([[1.0]], c=1.0, lip_h=1.0, lip_ainv=4.0, sigma_sup=1.0))

    def test_to_dict(self):
        d = compute_adversary_ball(risk_ou_1d().flatness).to_dict()
        assert set(d) == {"radius", "K", "quadratic"}

    def test_clip(self):
        w = np.array([[3.0, 4.0], [0.3, 0.4]])
        out = clip_to_ball(w, 1.0)
        np.testing.assert_allclose(out, [[0.6, 0.8], [0.3, 0.4]])


class TestHamiltonian:
    def test_inner_max_brute_force(self, grid):
        p = risk_ou_1d()
        ball = compute_adversary_ball(p.flatness)
        x = grid.nodes[:, 0]
        f = np.sin(x) + 0.3 * x**2
        h = grid.spacing
        for k in (60, 120, 171):
            val, _, w = risk_hamiltonian(grid, f, k, p, ball)
            grad = (f[k + 1] - f[k - 1]) / (2 * h)
            lap = (f[k + 1] - 2 * f[k] + f[k - 1]) / h**2
            ws = np.linspace(-ball.radius, ball.radius, 400001)
            brute = np.max((-x[k] + ws) * grad - ws**2 / 4) + lap + 3 / 16 * x[k] ** 2
            assert val == pytest.approx(brute, abs=1e-6)
            assert abs(w[0]) <= ball.radius + 1e-12

    def test_zero_ball_is_generator(self, grid):
        p = ou_risk(lambda x, u: np.zeros(x.shape[:-1]))
        f = grid.nodes[:, 0] ** 2
        val, _, w = risk_hamiltonian(grid, f, grid.locate([[1.0]])[0], p, AdversaryBall(0.0, 0.0))
        assert w[0] == 0.0
        assert val == pytest.approx(-2.0 + 2.0, abs=1e-9)


class TestRiskGame:
    def test_ou_benchmark(self, risk_sol, grid):
        beta, k = exact(3 / 16)
        assert risk_sol.beta == pytest.approx(beta, abs=1e-3)
        x = grid.nodes[:, 0]
        core = grid.core_mask
        assert np.max(np.abs(risk_sol.phi_star.values - k * x**2)[core]) < 5e-3
        assert risk_sol.report.details["unresolved_upwind_nodes"] == 0
        assert risk_sol.report.details["radial_projection_exact"]

    def test_zero_payoff(self, grid):
        sol = solve_risk_game(ou_risk(lambda x, u: np.zeros(x.shape[:-1])), grid, t_end=2.0)
        assert sol.beta == 0.0
        assert np.all(sol.phi_star.values == 0.0)

    def test_small_theta(self, grid):
        theta = 0.01
        sol = solve_risk_game(risk_ou_1d(theta=theta), grid, t_end=20.0)
        assert sol.beta == pytest.approx(exact(theta)[0], abs=1e-4)
        assert sol.beta == pytest.approx(theta, rel=2e-2)

    def test_constant_shift(self, risk_sol, grid):
        base = risk_ou_1d()
        shifted = RiskProblem(dim=1, drift=base.drift, sigma=base.sigma,
                              payoff=lambda x, u: base.payoff(x, u) + 0.4,
                              controls=base.controls, flatness=base.flatness)
        sol = solve_risk_game(shifted, grid, t_end=20.0)
        assert sol.beta - risk_sol.beta == pytest.approx(0.4, abs=1e-6)

    def test_needs_reflecting_grid(self):
        with pytest.raises(InvalidInputError):
            solve_risk_game(risk_ou_1d(), Grid(1, 4.0, 41, boundary="dirichlet_zero"))

    def test_cfl(self, grid):
        with pytest.raises(InvalidInputError, match="CFL"):
            solve_risk_game(risk_ou_1d(), grid, dt=1.0)

    def test_negative_payoff_rejected(self, grid):
        with pytest.raises(InvalidInputError, match="nonnegative"):
            solve_risk_game(ou_risk(lambda x, u: x[..., 0]), grid)


class TestMultiplicative:
    def test_positive(self, mult):
        assert np.all(mult[1].values > 0)

    def test_log_matches(self, mult):
        g, psi, rep = mult
        beta, k = exact(3 / 16)
        assert rep.details["beta_estimate"] == pytest.approx(beta, abs=1e-3)
        x = g.nodes[:, 0]
        log_rel = np.log(psi.values) - np.log(psi.values[g.origin_index])
        core = g.core_mask
        assert np.max(np.abs(log_rel - k * x**2)[core]) < 5e-3

    def test_stationary_at_exact(self):
        g = Grid(1, 7.0, 401)
        beta, k = exact(3 / 16)
        start = np.exp(beta + k * g.nodes[:, 0] ** 2)
        psi, _ = rvi_multiplicative(risk_ou_1d(radius=7.0), g, t_end=0.5, psi0=start)
        core = np.abs(g.nodes[:, 0]) <= 3.0
        assert np.max(np.abs(psi.values / start - 1)[core]) < 1e-3

    def test_bad_start(self):
        g = Grid(1, 4.0, 41)
        with pytest.raises(InvalidInputError):
            rvi_multiplicative(risk_ou_1d(), g, psi0=np.zeros(g.size))
