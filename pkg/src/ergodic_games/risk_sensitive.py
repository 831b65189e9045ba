"""Risk-sensitive control through its game against a ball-constrained adversary.

The controller minimizes; the adversary drift ``w`` is maximized analytically
(``w* = a p`` clipped radially to the ball), so no matrix game is needed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ergodic_games.errors import (
    CertificateViolationError,
    DivergenceError,
    InvalidInputError,
)
from ergodic_games.ergodic_solver import (
    BETA_WINDOW,
    ErgodicSolution,
    SolveReport,
    StrategyField,
    _explicit_march,
)
from ergodic_games.grid_fd import Grid, ValueField, build_weights
from ergodic_games.problem import ControlSet, FlatnessCertificate, check_flatness
from ergodic_games import kernels

MAX_REUPWIND = 3


@dataclass(eq=False)
class RiskProblem:
    """Single-controller problem; ``drift(x, u)`` and ``payoff(x, u)`` vectorized over x."""

    dim: int
    drift: callable
    sigma: callable
    payoff: callable
    controls: ControlSet
    flatness: FlatnessCertificate
    eps: float = 1.0
    alpha_exp: float = 0.5
    name: str = "custom-risk"

    def diffusion(self, x):
        s = np.asarray(self.sigma(np.asarray(x, dtype=np.float64)), dtype=np.float64)
        return s @ np.swapaxes(s, -1, -2)

    def drift_table(self, x):
        """(m, N, d)"""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.stack([np.broadcast_to(self.drift(x, u), x.shape) for u in self.controls.points])

    def payoff_table(self, x):
        """(m, N)"""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.stack([np.broadcast_to(self.payoff(x, u), x.shape[:1]) for u in self.controls.points])

    def drift_variants(self):
        return [(f"u[{i}]", lambda x, u=u: self.drift(x, u)) for i, u in enumerate(self.controls.points)]

    def lyapunov(self, x):
        """(x'Qx)^(1+alpha) / (eps + (x'Qx)^(1/2))"""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        q = np.einsum("nd,de,ne->n", x, self.flatness.Q, x)
        return q ** (1 + self.alpha_exp) / (self.eps + np.sqrt(q))

    def validate(self, sample):
        x = np.atleast_2d(np.asarray(sample, dtype=np.float64))
        if not (np.all(np.isfinite(self.drift_table(x))) and np.all(np.isfinite(self.diffusion(x)))):
            raise InvalidInputError("drift and sigma must be bounded (finite) on the domain")
        if np.any(self.payoff_table(x) < 0):
            raise InvalidInputError("payoff must be nonnegative")

    def certify(self, pairs):
        return check_flatness(self, pairs)


@dataclass(frozen=True)
class AdversaryBall:
    radius: float
    K: float
    coefficients: tuple = (0.0, 0.0, 0.0)

    def to_dict(self):
        qa, qb, qc = self.coefficients
        return {"radius": self.radius, "K": self.K, "quadratic": {"a": qa, "b": qb, "c": qc}}


def compute_adversary_ball(cert: FlatnessCertificate) -> AdversaryBall:
    """Radius of the ball the adversary's supremum may be restricted to.

    K is the smallest positive root of
    (sqrt(c)/2) S L_ainv x^2 - c^(5/4) x + L_h S = 0 with S = ||sigma sigma'||,
    and R = L_h / c + L_ainv K^2 / (2 sqrt(c)).
    """
    c, S = cert.c, cert.sigma_sup
    qa = 0.5 * np.sqrt(c) * S * cert.lip_ainv
    qb = -(c**1.25)
    qc = cert.lip_h * S
    if qa == 0.0:
        K = qc / c**1.25
    else:
        disc = qb * qb - 4 * qa * qc
        if disc < 0:
            raise CertificateViolationError(
                f"no real root (discriminant {disc:.3e}); the constant flatness condition fails",
                where="risk_sensitive.compute_adversary_ball",
            )
        # smaller root in the cancellation-free form
        K = 2 * qc / (-qb + np.sqrt(disc))
    R = cert.lip_h / c + cert.lip_ainv * K**2 / (2 * np.sqrt(c))
    return AdversaryBall(float(R), float(K), (float(qa), float(qb), float(qc)))


def clip_to_ball(w, radius):
    """Radial (Euclidean) projection of rows of w onto the closed ball."""
    norm = np.linalg.norm(w, axis=-1, keepdims=True)
    scale = np.where(norm > radius, radius / np.maximum(norm, 1e-300), 1.0)
    return w * scale


class RiskDiscretization:
    """Tabulated coefficients for the log-domain (game) and multiplicative forms."""

    def __init__(self, problem: RiskProblem, grid: Grid, ball: AdversaryBall, scheme="hybrid"):
        if problem.dim != grid.dim:
            raise InvalidInputError(f"problem dim {problem.dim} != grid dim {grid.dim}")
        if grid.boundary != "one_sided":
            raise InvalidInputError("risk-sensitive marchers need a one_sided grid")
        x = grid.nodes
        problem.validate(x)
        self.problem, self.grid, self.ball, self.scheme = problem, grid, ball, scheme
        self.active = np.ones(grid.size, dtype=bool)
        self.a = problem.diffusion(x)
        try:
            self.ainv = np.linalg.inv(self.a)
        except np.linalg.LinAlgError:
            raise InvalidInputError("a(x) is singular on the grid", where="risk_sensitive") from None
        if not np.all(np.isfinite(self.ainv)) or np.any(np.linalg.eigvalsh(self.a).min(axis=1) <= 0):
            raise InvalidInputError("a(x) must be positive definite", where="risk_sensitive")
        self.b = problem.drift_table(x)  # (m, N, d)
        self.h = problem.payoff_table(x)  # (m, N)
        self.nbr = grid.neighbors
        N, d = grid.size, grid.dim
        self.w0, self.diag0 = build_weights(grid, np.arange(N), np.zeros((1, N, d)), self.a, scheme)
        hsp = grid.spacing
        mi = grid.multi_index
        self.lo = mi == 0
        self.hi = mi == grid.n - 1
        interior = ~np.any(self.lo | self.hi, axis=1)
        cross = np.abs(self.a[:, 0, 1]) * interior if d == 2 else np.zeros(N)
        self.second = np.where(self.lo | self.hi, 0.0,
                               (np.einsum("nkk->nk", self.a) - cross[:, None]) / (2 * hsp * hsp))
        idx = np.arange(N)
        self.fwd = np.empty((N, d), dtype=np.int64)
        self.bwd = np.empty((N, d), dtype=np.int64)
        for k in range(d):
            self.fwd[:, k] = np.where(self.hi[:, k], idx, idx + grid.n**k)
            self.bwd[:, k] = np.where(self.lo[:, k], idx, idx - grid.n**k)
        # multiplicative form: plain controlled generator per control
        self.wm, self.diagm = build_weights(grid, np.arange(N), self.b, self.a, scheme)

    def _gradient(self, f, dvec):
        hsp = self.grid.spacing
        dp = (f[self.fwd] - f[:, None]) / hsp
        dm = (f[:, None] - f[self.bwd]) / hsp
        centered = (self.second >= np.abs(dvec) / (2 * hsp)) & (self.scheme == "hybrid")
        p = np.where(centered, 0.5 * (dp + dm), np.where(dvec >= 0, dp, dm))
        p = np.where(self.lo, dp, p)
        return np.where(self.hi, dm, p)

    def _drift_term(self, dvec, p):
        d = np.where(self.lo, np.maximum(dvec, 0.0), dvec)
        d = np.where(self.hi, np.minimum(dvec, 0.0), d)
        return np.einsum("nk,nk->n", d, p)

    def control_values(self, f):
        """Per-control values of max_w [(b+w).grad f + tr-term + h - w'a^{-1}w/2].

        Returns (values (m, N), adversary w (m, N, d), unresolved upwind count).
        """
        f = np.ascontiguousarray(f, dtype=np.float64)
        second = kernels.stencil_apply(f, self.nbr, self.w0, self.diag0)[0]
        R = self.ball.radius
        m = self.b.shape[0]
        out = np.empty((m, self.grid.size))
        ws = np.empty(self.b.shape)
        unresolved = 0
        for v in range(m):
            b = self.b[v]
            p = self._gradient(f, b)
            for _ in range(MAX_REUPWIND):
                w = clip_to_ball(np.einsum("nij,nj->ni", self.a, p), R)
                p_new = self._gradient(f, b + w)
                if np.array_equal(p_new, p):
                    break
                p = p_new
            w = clip_to_ball(np.einsum("nij,nj->ni", self.a, p), R)
            unresolved += int(np.any(self._gradient(f, b + w) != p, axis=1).sum())
            penalty = 0.5 * np.einsum("ni,nij,nj->n", w, self.ainv, w)
            out[v] = self._drift_term(b + w, p) + second + self.h[v] - penalty
            ws[v] = w
        return out, ws, unresolved

    def values(self, f):
        return self.control_values(f)[0].min(axis=0)

    def cfl_dt(self):
        hsp = self.grid.spacing
        speed = np.abs(self.b).max(axis=0) + self.ball.radius  # (N, d)
        rate = self.w0[0].sum(axis=1) + speed.sum(axis=1) / hsp
        return 0.9 / (float(rate.max()) + 1.0)

    def multiplicative_values(self, psi):
        """min over controls of L_v psi + h_v psi: (N,)."""
        Lpsi = kernels.stencil_apply(np.ascontiguousarray(psi), self.nbr, self.wm, self.diagm)
        return (Lpsi + self.h * psi).min(axis=0)

    def multiplicative_cfl(self):
        rate = self.wm.sum(axis=2).max()
        return 0.9 / (float(rate) + float(np.abs(self.h).max()) + 1.0)


def _isotropic(a):
    d = a.shape[-1]
    off = a - np.einsum("nkk->nk", a)[:, :, None] * np.eye(d)
    diag = np.einsum("nkk->nk", a)
    return bool(np.allclose(off, 0) and np.allclose(diag, diag[:, :1]))


def risk_hamiltonian(grid: Grid, f, node, problem: RiskProblem, ball: AdversaryBall, scheme="hybrid"):
    """(value, minimizing control point, adversary w*) at one node."""
    k = grid.node_index(node)
    disc = RiskDiscretization(problem, grid, ball, scheme)
    values = f.values if isinstance(f, ValueField) else np.asarray(f, dtype=np.float64)
    per_control, ws, _ = disc.control_values(values)
    v = int(per_control[:, k].argmin())
    return float(per_control[v, k]), problem.controls.points[v].copy(), ws[v, k].copy()


def _lip_on_box(problem, grid):
    """Largest payoff slope between neighboring nodes (recorded, not certified)."""
    h = problem.payoff_table(grid.nodes)
    nb = grid.neighbors[:, : 2 * grid.dim]
    slopes = np.abs(h[:, nb] - h[:, :, None]) / grid.spacing
    return float(slopes.max())


def solve_risk_game(problem: RiskProblem, grid: Grid, dt=None, t_end=20.0, phi0=None,
                    ball: AdversaryBall = None, conv_tol=1e-5, scheme="hybrid") -> ErgodicSolution:
    """Relative value iteration for the adversarial (log-domain) form."""
    t0 = time.perf_counter()
    ball = ball or compute_adversary_ball(problem.flatness)
    disc = RiskDiscretization(problem, grid, ball, scheme)
    cfl = disc.cfl_dt()
    dt = cfl if dt is None else dt
    if dt > cfl * (1 + 1e-12):
        raise InvalidInputError(f"dt={dt:g} violates the CFL bound {cfl:.6g}")
    if phi0 is None:
        phi0 = np.zeros(grid.size)
    f, report = _explicit_march(disc, phi0, dt, t_end, None, disc.values, None, conv_tol,
                                "solve_risk_game")
    per_control, ws, unresolved = disc.control_values(f)
    choice = per_control.argmin(axis=0)
    selectors = StrategyField(grid, np.eye(len(problem.controls))[choice])
    beta = report.details["beta_estimate"]
    phi = f - f[grid.origin_index]
    report.method = "risk_game"
    report.wall_clock = time.perf_counter() - t0
    report.details.update({
        "adversary_ball": ball.to_dict(),
        "lip_h_on_box": _lip_on_box(problem, grid),
        "unresolved_upwind_nodes": unresolved,
        "adversary_max_norm": float(np.linalg.norm(ws, axis=-1).max()),
        "ball_active_nodes": int((np.linalg.norm(ws[choice, np.arange(grid.size)], axis=-1)
                                  >= ball.radius * (1 - 1e-12)).sum()),
        "radial_projection_exact": _isotropic(disc.a),
    })
    return ErgodicSolution(beta, ValueField(grid, phi, {"kind": "risk", "method": "risk_game"}),
                           selectors, report)


def rvi_multiplicative(problem: RiskProblem, grid: Grid, dt=None, t_end=20.0, psi0=None,
                       conv_tol=1e-5, scheme="hybrid"):
    """Multiplicative RVI: d psi/dt = min_v [L_v psi + (h_v - ln psi(t,0)) psi].

    The limit is e^beta psi* with psi*(0) = 1; ``details['beta_estimate']`` is the
    time average of ln psi(t,0) over the final tenth of the horizon.
    """
    t0 = time.perf_counter()
    ball = AdversaryBall(0.0, 0.0)
    disc = RiskDiscretization(problem, grid, ball, scheme)
    cfl = disc.multiplicative_cfl()
    dt = cfl if dt is None else dt
    if dt > cfl * (1 + 1e-12):
        raise InvalidInputError(f"dt={dt:g} violates the CFL bound {cfl:.6g}")
    psi = np.ones(grid.size) if psi0 is None else np.array(
        psi0.values if isinstance(psi0, ValueField) else psi0, dtype=np.float64)
    if np.any(psi <= 0) or not np.all(np.isfinite(psi)):
        raise InvalidInputError("psi0 must be positive and finite")
    n_steps = int(round(t_end / dt))
    o = grid.origin_index
    core = grid.core_mask
    residual = np.empty(n_steps)
    log_origin = np.empty(n_steps + 1)
    log_origin[0] = np.log(psi[o])
    for k in range(n_steps):
        offset = np.log(psi[o])
        dpsi = dt * (disc.multiplicative_values(psi) - offset * psi)
        psi = psi + dpsi
        if not np.all(psi > 0) or not np.all(np.isfinite(psi)):
            raise DivergenceError(
                "positivity lost in multiplicative RVI; use a smaller dt or solve_risk_game",
                where=f"risk_sensitive.rvi_multiplicative: step {k + 1}, t={(k + 1) * dt:.6g}",
                history=residual[:k].tolist(),
            )
        residual[k] = np.max(np.abs(dpsi[core] / psi[core])) / dt
        log_origin[k + 1] = np.log(psi[o])
    window = log_origin[n_steps - max(1, int(round(BETA_WINDOW * n_steps))) + 1:]
    report = SolveReport(
        "risk_multiplicative", n_steps, residual.tolist(), time.perf_counter() - t0,
        converged=bool(residual[-1] <= conv_tol),
        details={"dt": dt, "t_end": n_steps * dt, "beta_estimate": float(window.mean()),
                 "psi_origin_final": float(psi[o])},
        trace={"time": dt * np.arange(1, n_steps + 1), "offset": log_origin[:-1],
               "origin": log_origin, "dt": dt},
    )
    return ValueField(grid, psi, {"kind": "risk", "method": "multiplicative"}), report
