"""Discounted and ergodic Isaacs solvers, value / relative value iteration.

Sign convention everywhere: player 1 maximizes, player 2 minimizes.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_trapezoid

from ergodic_games import kernels
from ergodic_games.errors import (
    ConfigurationError,
    ConvergenceError,
    DivergenceError,
    InvalidInputError,
)
from ergodic_games.grid_fd import Discretization, Grid, ValueField, write_node_csv
from ergodic_games.matrix_game import MixedStrategy

DEFAULT_ALPHAS = tuple(0.5 * 2.0**-k for k in range(8))
BETA_WINDOW = 0.1  # final fraction of the horizon averaged for the RVI beta
SWITCH_EPS = 64 * np.finfo(np.float64).eps


@dataclass(eq=False)
class StrategyField:
    grid: Grid
    p1: np.ndarray
    p2: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("p1", "p2"):
            p = getattr(self, name)
            if p is None:
                continue
            p = np.asarray(p, dtype=np.float64)
            if p.ndim != 2 or p.shape[0] != self.grid.size:
                raise InvalidInputError(f"{name} must have one row per node")
            if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1) > 1e-12):
                raise InvalidInputError(f"{name} rows must be probability vectors")
            setattr(self, name, p)

    def at(self, node):
        k = self.grid.node_index(node)
        v2 = MixedStrategy(self.p2[k]) if self.p2 is not None else None
        return MixedStrategy(self.p1[k]), v2

    def interpolate(self, x):
        """Multilinear interpolation of both players' weights at points x (M, d)."""
        idx, wts = _cell_weights(self.grid, x)
        p1 = np.einsum("mc,mci->mi", wts, self.p1[idx])
        p2 = None if self.p2 is None else np.einsum("mc,mci->mi", wts, self.p2[idx])
        return p1, p2

    def to_csv(self, path):
        cols = {f"p1_{i}": self.p1[:, i] for i in range(self.p1.shape[1])}
        if self.p2 is not None:
            cols.update({f"p2_{j}": self.p2[:, j] for j in range(self.p2.shape[1])})
        write_node_csv(path, self.grid, cols)


def _cell_weights(grid, x):
    """Corner node indices (M, 2**d) and multilinear weights for points x."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h = grid.spacing
    s = np.clip((x + grid.radius) / h, 0.0, grid.n - 1)
    i0 = np.minimum(np.floor(s).astype(np.int64), grid.n - 2)
    t = s - i0
    M, d = x.shape
    corners = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
    idx = np.zeros((M, len(corners)), dtype=np.int64)
    wts = np.ones((M, len(corners)))
    for c, corner in enumerate(corners):
        for k in range(d):
            idx[:, c] += (i0[:, k] + corner[k]) * grid.n**k
            wts[:, c] *= t[:, k] if corner[k] else 1.0 - t[:, k]
    return idx, wts


@dataclass
class SolveReport:
    method: str
    iterations: int = 0
    residuals: list = field(default_factory=list)
    wall_clock: float = 0.0
    truncation: dict = field(default_factory=dict)
    converged: bool = False
    details: dict = field(default_factory=dict)
    trace: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        res = [float(r) for r in self.residuals]
        return {
            "method": self.method,
            "iterations": int(self.iterations),
            "n_residuals": len(res),
            "final_residual": res[-1] if res else None,
            "residuals_head": res[:5],
            "residuals_tail": res[-5:],
            "wall_clock": self.wall_clock,
            "truncation": self.truncation,
            "converged": bool(self.converged),
            "details": _jsonable(self.details),
        }

    def write_residual_csv(self, path):
        """step, time, residual, offset value (offset blank where undefined)."""
        tr = self.trace
        steps = np.arange(1, len(self.residuals) + 1)
        times = tr.get("time", steps.astype(float))
        offsets = tr.get("offset")
        with open(path, "w") as fh:
            fh.write("step,time,residual,offset\n")
            for k, r in enumerate(self.residuals):
                off = repr(float(offsets[k])) if offsets is not None else ""
                t = repr(float(times[k])) if len(times) > k else ""
                fh.write(f"{int(steps[k])},{t},{repr(float(r))},{off}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


@dataclass(eq=False)
class ErgodicSolution:
    beta: float
    phi_star: ValueField
    selectors: StrategyField
    report: SolveReport

    def __post_init__(self):
        if self.phi_star.origin_value != 0.0:
            raise InvalidInputError("phi_star must vanish at the origin node")


@dataclass
class DiagnosticReport:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "metrics": _jsonable(self.metrics)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class DiscountedResult(NamedTuple):
    value: ValueField
    strategies: StrategyField
    report: SolveReport


def _discretize(problem, grid, scheme, disc):
    if disc is not None:
        if disc.grid != grid:
            raise InvalidInputError("discretization was built for a different grid")
        return disc
    return Discretization(problem, grid, scheme)


def elliptic_residual(disc: Discretization, phi, beta):
    """sup over core nodes of |game value of (L phi + h) - beta|."""
    vals = kernels.game_values(disc.hamiltonian(phi))
    core = disc.grid.core_mask & disc.active
    return float(np.max(np.abs(vals[core] - beta)))


def _policy_solve(disc, alpha, p1, p2):
    A, r = disc.policy_operator(p1, p2)
    act = np.flatnonzero(disc.active)
    M = (alpha * sp.identity(disc.grid.size, format="csr") - A)[act][:, act]
    psi = np.zeros(disc.grid.size)
    psi[act] = spla.spsolve(M.tocsc(), r[act])
    return psi


def _best_response_value(disc, alpha, p1, psi, max_inner):
    """Howard iteration for the minimizer against a fixed mixed p1."""
    N = disc.grid.size
    eye2 = np.eye(disc.m2)
    reduced = np.einsum("ki,kij->kj", p1, disc.hamiltonian(psi))
    j = reduced.argmin(axis=1)
    for _ in range(max_inner):
        psi = _policy_solve(disc, alpha, p1, eye2[j])
        reduced = np.einsum("ki,kij->kj", p1, disc.hamiltonian(psi))
        j_new = reduced.argmin(axis=1)
        current = reduced[np.arange(N), j]
        # switches smaller than the rounding level of the generator would cycle
        noise = SWITCH_EPS * (np.abs(psi).max() * disc.max_rate() + np.abs(disc.payoff).max())
        better = reduced[np.arange(N), j_new] < current - noise
        better &= disc.active
        if not better.any():
            return psi
        j = np.where(better, j_new, j)
    raise ConvergenceError("inner policy iteration did not settle", where="ergodic_solver.solve_discounted")


def solve_discounted(problem, grid: Grid, alpha: float, tol=1e-8, max_sweeps=200,
                     max_inner=200, scheme="hybrid", disc=None) -> DiscountedResult:
    """Discounted Isaacs equation on a truncated box with zero boundary values.

    Policy iteration: each sweep solves the per-node matrix games for the
    maximizer's mixed strategy, then the minimizer's best-response chain by
    Howard iteration (sparse direct solves). Converged when the sup change
    between sweeps is at most ``tol * alpha``.
    """
    if not alpha > 0:
        raise InvalidInputError(f"discount must be positive, got {alpha}")
    if grid.boundary != "dirichlet_zero":
        raise InvalidInputError("discounted solves need a dirichlet_zero grid")
    t0 = time.perf_counter()
    disc = _discretize(problem, grid, scheme, disc)
    psi = np.zeros(grid.size)
    history = []
    converged = False
    for sweep in range(1, max_sweeps + 1):
        _, p1, _ = kernels.solve_games(disc.hamiltonian(psi))
        psi_new = _best_response_value(disc, alpha, p1, psi, max_inner)
        change = float(np.max(np.abs(psi_new - psi)))
        history.append(change)
        psi = psi_new
        if change <= tol * alpha:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"policy iteration did not converge in {max_sweeps} sweeps",
            where=f"ergodic_solver.solve_discounted alpha={alpha}",
            history=history,
        )
    _, p1, p2 = kernels.solve_games(disc.hamiltonian(psi))
    report = SolveReport(
        "discounted", sweep, history, time.perf_counter() - t0, converged=True,
        details={"alpha": alpha, "psi_origin": psi[grid.origin_index]},
    )
    field_ = ValueField(grid, psi, {"kind": "discounted", "alpha": alpha})
    return DiscountedResult(field_, StrategyField(grid, p1, p2), report)


def vanishing_discount(problem, grid: Grid, alphas=DEFAULT_ALPHAS, tol=1e-8,
                       residual_tol=0.1, trend_tol=1e-6, scheme="hybrid") -> ErgodicSolution:
    """Ergodic value and bias as limits of discounted solutions.

    beta is the last iterate alpha_min * psi(0); the bias is psi - psi(0) at
    alpha_min. On the returned pair the elliptic residual equals
    alpha_min * |bias| identically, so ``residual_tol`` bounds that product
    on the core region.
    """
    alphas = [float(a) for a in alphas]
    if not alphas or alphas[-1] <= 0 or any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise InvalidInputError("alphas must be strictly decreasing and positive")
    t0 = time.perf_counter()
    disc = _discretize(problem, grid, scheme, None)
    o = grid.origin_index
    table = []
    result = None
    for a in alphas:
        result = solve_discounted(problem, grid, a, tol=tol, disc=disc)
        psi = result.value.values
        table.append({"alpha": a, "beta_hat": float(a * psi[o]), "sweeps": result.report.iterations})
    betas = np.array([r["beta_hat"] for r in table])
    steps = np.diff(betas)
    monotone = bool(np.all(steps >= -trend_tol) or np.all(steps <= trend_tol))
    if not monotone:
        warnings.warn("vanishing-discount beta trend is not monotone", stacklevel=2)
    beta = float(betas[-1])
    phi = result.value.values - result.value.values[o]
    residual = elliptic_residual(disc, phi, beta)
    report = SolveReport(
        "vanishing_discount", len(alphas), [r["beta_hat"] for r in table],
        time.perf_counter() - t0, converged=residual <= residual_tol,
        details={"trend": table, "monotone_trend": monotone, "elliptic_residual": residual,
                 "alpha_min": alphas[-1]},
    )
    if residual > residual_tol:
        raise ConvergenceError(
            f"elliptic residual {residual:.3e} exceeds {residual_tol}",
            where="ergodic_solver.vanishing_discount", history=report.residuals,
        )
    phi_field = ValueField(grid, phi, {"kind": "ergodic", "method": "vanishing_discount"})
    return ErgodicSolution(beta, phi_field, result.strategies, report)


def _explicit_march(disc, phi0, dt, t_end, offset, value_fn, checkpoints, conv_tol, method):
    """Shared explicit Euler marcher; offset is a float or None (origin value)."""
    grid = disc.grid
    f = np.array(phi0.values if isinstance(phi0, ValueField) else phi0, dtype=np.float64)
    if f.size != grid.size:
        raise InvalidInputError("initial field does not match the grid")
    if not (np.isfinite(dt) and dt > 0 and t_end > 0):
        raise InvalidInputError("dt and t_end must be positive")
    n_steps = int(round(t_end / dt))
    if n_steps < 1:
        raise InvalidInputError("t_end shorter than one step")
    o = grid.origin_index
    core = grid.core_mask & disc.active
    frozen = ~disc.active
    ck_steps = {}
    for t in checkpoints or ():
        k = int(round(t / dt))
        if not 0 <= k <= n_steps:
            raise InvalidInputError(f"checkpoint {t} outside [0, t_end]")
        ck_steps[k] = t
    snapshots = {}
    if 0 in ck_steps:
        snapshots[0] = f.copy()
    residual = np.empty(n_steps)
    offsets = np.empty(n_steps)
    origin = np.empty(n_steps + 1)
    origin[0] = f[o]
    t0 = time.perf_counter()
    for k in range(n_steps):
        off = f[o] if offset is None else offset
        df = dt * (value_fn(f) - off)
        df[frozen] = 0.0
        f += df
        if not np.isfinite(f).all():
            bad = int(np.flatnonzero(~np.isfinite(f))[0])
            raise DivergenceError(
                "non-finite values in explicit march",
                where=f"ergodic_solver.{method}: step {k + 1}, t={(k + 1) * dt:.6g}, node {bad}",
                history=residual[:k].tolist(),
            )
        residual[k] = np.max(np.abs(df[core])) / dt
        offsets[k] = off
        origin[k + 1] = f[o]
        if k + 1 in ck_steps:
            snapshots[k + 1] = f.copy()
    window = origin[n_steps - max(1, int(round(BETA_WINDOW * n_steps))) + 1:]
    report = SolveReport(
        method, n_steps, residual.tolist(), time.perf_counter() - t0,
        converged=bool(residual[-1] <= conv_tol),
        details={"dt": dt, "t_end": n_steps * dt, "origin_final": f[o],
                 "beta_estimate": float(window.mean())},
        trace={"time": dt * np.arange(1, n_steps + 1), "offset": offsets, "origin": origin,
               "snapshots": snapshots, "dt": dt},
    )
    return f, report


def _check_dt(disc, dt, extra_rate=1.0):
    cfl = disc.cfl_dt(extra_rate)
    if dt is None:
        return cfl
    if dt > cfl * (1 + 1e-12):
        raise InvalidInputError(f"dt={dt:g} violates the CFL bound {cfl:.6g}")
    return dt


def _game_value_fn(disc):
    return lambda f: kernels.game_values(disc.hamiltonian(f))


def vi_march(problem, grid, phi0, beta, dt=None, t_end=10.0, checkpoints=None,
             conv_tol=1e-5, scheme="hybrid", disc=None):
    """Value iteration: d phi/dt = game value of (L phi + h) - beta."""
    if not np.isfinite(beta):
        raise InvalidInputError("beta must be finite")
    disc = _discretize(problem, grid, scheme, disc)
    dt = _check_dt(disc, dt)
    f, report = _explicit_march(disc, phi0, dt, t_end, float(beta), _game_value_fn(disc),
                                checkpoints, conv_tol, "vi_march")
    report.details["beta"] = float(beta)
    return ValueField(grid, f, {"kind": "parabolic", "t": report.details["t_end"], "method": "vi"}), report


def rvi_march(problem, grid, phi0, dt=None, t_end=20.0, checkpoints=None,
              conv_tol=1e-5, scheme="hybrid", disc=None):
    """Relative value iteration: offset is the origin value at the start of each step."""
    disc = _discretize(problem, grid, scheme, disc)
    dt = _check_dt(disc, dt)
    f, report = _explicit_march(disc, phi0, dt, t_end, None, _game_value_fn(disc),
                                checkpoints, conv_tol, "rvi_march")
    return ValueField(grid, f, {"kind": "parabolic", "t": report.details["t_end"], "method": "rvi"}), report


def extract_selectors(problem, grid, phi, scheme="hybrid", disc=None) -> StrategyField:
    """Per-node saddle strategies of the Hamiltonian assembled on phi."""
    disc = _discretize(problem, grid, scheme, disc)
    values = phi.values if isinstance(phi, ValueField) else np.asarray(phi, dtype=np.float64)
    _, p1, p2 = kernels.solve_games(disc.hamiltonian(values))
    return StrategyField(grid, p1, p2)


def rvi_solve(problem, grid, phi0=None, dt=None, t_end=20.0, conv_tol=1e-5,
              residual_tol=1e-3, scheme="hybrid") -> ErgodicSolution:
    """RVI to a long horizon, then beta, the normalized bias and selectors."""
    t0 = time.perf_counter()
    disc = Discretization(problem, grid, scheme)
    if phi0 is None:
        phi0 = np.zeros(grid.size)
    field_, report = rvi_march(problem, grid, phi0, dt, t_end, conv_tol=conv_tol, disc=disc)
    beta = report.details["beta_estimate"]
    phi = field_.values - field_.origin_value
    residual = elliptic_residual(disc, phi, field_.origin_value)
    report.details["elliptic_residual"] = residual
    report.details["phi0_vnorm"] = _vnorm_estimate(problem, grid, phi0)
    report.converged = report.converged and residual <= residual_tol
    report.wall_clock = time.perf_counter() - t0
    selectors = extract_selectors(problem, grid, phi, disc=disc)
    return ErgodicSolution(beta, ValueField(grid, phi, {"kind": "ergodic", "method": "rvi"}),
                           selectors, report)


def _vnorm_estimate(problem, grid, phi0):
    cert = problem.lyapunov
    if cert is None:
        return None
    values = phi0.values if isinstance(phi0, ValueField) else np.asarray(phi0, dtype=np.float64)
    return float(np.max(np.abs(values) / cert.V(grid.nodes)))


def _default_checkpoints(t_end, count=10):
    return [t_end * k / count for k in range(count + 1)]


def check_lemma33(problem, grid, phi0, beta, dt, t_end, checkpoints=None,
                  tol=5e-3, scheme="hybrid") -> DiagnosticReport:
    """Run VI and RVI from the same start and measure both coupling identities.

    (1) phi(t,x) - phi(t,0) == vi(t,x) - vi(t,0)
    (2) phi(t,x) == vi(t,x) - int_0^t e^{s-t} vi(s,0) ds + beta (1 - e^{-t})
    The time integral is the trapezoid rule on the stored vi(s,0) trace.
    """
    disc = Discretization(problem, grid, scheme)
    checkpoints = sorted(checkpoints or _default_checkpoints(t_end))
    _, rep_r = rvi_march(problem, grid, phi0, dt, t_end, checkpoints, disc=disc)
    _, rep_v = vi_march(problem, grid, phi0, beta, dt, t_end, checkpoints, disc=disc)
    return lemma33_residuals(rep_r, rep_v, grid, beta, tol)


def lemma33_residuals(rvi_report, vi_report, grid, beta, tol=5e-3) -> DiagnosticReport:
    """Coupling residuals from two completed marches (must share dt, grid and start)."""
    tr, tv = rvi_report.trace, vi_report.trace
    if tr.get("dt") != tv.get("dt") or len(tr["origin"]) != len(tv["origin"]):
        raise InvalidInputError("VI and RVI marches used different dt or horizon")
    if set(tr["snapshots"]) != set(tv["snapshots"]):
        raise InvalidInputError("VI and RVI marches used different checkpoints")
    s0r, s0v = tr["snapshots"].get(0), tv["snapshots"].get(0)
    if s0r is not None and not np.array_equal(s0r, s0v):
        raise InvalidInputError("VI and RVI marches started from different fields")
    dt = tr["dt"]
    core = grid.core_mask
    o = grid.origin_index
    s = dt * np.arange(len(tv["origin"]))
    # scaled to avoid overflow of e^s on long horizons
    cum = cumulative_trapezoid(np.exp(s - s[-1]) * tv["origin"], s, initial=0.0)
    rows = []
    worst1 = worst2 = 0.0
    for k in sorted(tr["snapshots"]):
        phi = tr["snapshots"][k]
        bar = tv["snapshots"][k]
        t = k * dt
        r1 = float(np.max(np.abs((phi - phi[o]) - (bar - bar[o]))[core]))
        integral = cum[k] * np.exp(s[-1] - t)
        predicted = bar - integral + beta * (1 - np.exp(-t))
        r2 = float(np.max(np.abs(phi - predicted)[core]))
        rows.append({"t": t, "identity1": r1, "identity2": r2})
        worst1, worst2 = max(worst1, r1), max(worst2, r2)
    return DiagnosticReport(
        "rvi_vi_identities", worst1 <= tol and worst2 <= tol,
        {"identity1_max": worst1, "identity2_max": worst2, "tol": tol, "checkpoints": rows},
    )


def check_contraction(problem, grid, phi0, dt, checkpoints, solution: ErgodicSolution = None,
                      tol=1e-6, scheme="hybrid") -> DiagnosticReport:
    """Evaluate |vi(t,x) - phi*(x)| <= ||vi(s) - phi*||_V (k0/(2k1) + V(x) e^{-2k1(t-s)}).

    VI runs with the reference beta so that phi* is (up to discretization) a
    stationary point; norms and maxima are over core nodes. Without an explicit
    reference solution an RVI solve on the same grid supplies (beta, phi*).
    """
    cert = problem.lyapunov
    if cert is None or cert.mode != "A3":
        raise ConfigurationError("contraction check needs an A3 Lyapunov certificate",
                                 where="ergodic_solver.check_contraction")
    disc = Discretization(problem, grid, scheme)
    if solution is None:
        solution = rvi_solve(problem, grid, scheme=scheme)
    checkpoints = sorted(checkpoints)
    _, rep = vi_march(problem, grid, phi0, solution.beta, dt, max(checkpoints), checkpoints,
                      disc=disc)
    snaps = rep.trace["snapshots"]
    core = grid.core_mask
    V = cert.V(grid.nodes)[core]
    phi_star = solution.phi_star.values[core]
    errs = {k: np.abs(snaps[k][core] - phi_star) for k in snaps}
    norms = {k: float(np.max(e / V)) for k, e in errs.items()}
    step = rep.trace["dt"]
    worst = -np.inf
    rows = []
    for ks in sorted(snaps):
        for kt in sorted(snaps):
            if kt < ks:
                continue
            lag = (kt - ks) * step
            rhs = norms[ks] * (cert.k0 / (2 * cert.k1) + V * np.exp(-2 * cert.k1 * lag))
            margin = float(np.max(errs[kt] - rhs))
            rows.append({"s": ks * step, "t": kt * step, "margin": margin})
            worst = max(worst, margin)
    return DiagnosticReport("contraction", worst <= tol,
                            {"worst_violation": worst, "tol": tol, "pairs": rows,
                             "beta": solution.beta})


def truncation_diagnostic(problem, grid: Grid, alpha, shrink=0.75, scheme="hybrid"):
    """Discounted solutions on two nested boxes with equal spacing.

    Reports the sup difference on the smaller box's core; the larger
    solution should dominate the smaller one nodewise.
    """
    h = grid.spacing
    half = int(round(shrink * (grid.n - 1) / 2))
    small = Grid(grid.dim, half * h, 2 * half + 1, "dirichlet_zero", grid.core_fraction)
    big = grid.with_boundary("dirichlet_zero")
    v_small = solve_discounted(problem, small, alpha, scheme=scheme).value.values
    v_big = solve_discounted(problem, big, alpha, scheme=scheme).value.values
    big_idx = big.locate(small.nodes)
    diff = v_big[big_idx] - v_small
    return {
        "radii": [small.radius, big.radius],
        "alpha": alpha,
        "core_sup_difference": float(np.max(np.abs(diff[small.core_mask]))),
        "min_difference": float(diff.min()),
    }
