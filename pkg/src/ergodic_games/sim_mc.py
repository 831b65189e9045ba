"""Monte Carlo validation of solver output by Euler-Maruyama simulation.

Strategies are evaluated by multilinear interpolation of a StrategyField at the
current state. Every path owns two random streams derived from ``(seed, p)``:
one for the Brownian increments and one for sampling pure controls out of the
mixed weights. Results therefore do not depend on how paths are blocked or
scheduled across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from ergodic_games.errors import ConfigurationError, InvalidInputError
from ergodic_games.ergodic_solver import DiagnosticReport, StrategyField, _jsonable
from ergodic_games.problem import GameProblem

N_BATCHES = 30
CHUNK_STEPS = 256
MODES = ("sample_pure", "mean_drift")


@dataclass(frozen=True)
class SimConfig:
    dt_sim: float = 1e-3
    horizon: float = 20.0
    n_paths: int = 1000
    burn_in: float = 0.1
    seed: int = 0
    mode: str = "sample_pure"
    block_paths: int = 8192
    workers: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.dt_sim) and self.dt_sim > 0):
            raise InvalidInputError(f"dt_sim must be positive, got {self.dt_sim}")
        if not (0.0 <= self.burn_in < 1.0) or not self.horizon > 0:
            raise InvalidInputError("need horizon > burn_in * horizon >= 0")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise InvalidInputError(f"n_paths must be a positive integer, got {self.n_paths}")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.block_paths < 1 or self.workers < 1:
            raise InvalidInputError("block_paths and workers must be positive")
        if self.n_steps < 1:
            raise InvalidInputError("horizon shorter than one step")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt_sim))

    @property
    def burn_steps(self) -> int:
        return int(round(self.burn_in * self.n_steps))

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class PayoffEstimate:
    mean: float
    half_width: float
    n_effective: int
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.half_width >= 0:
            raise InvalidInputError("confidence half-width must be nonnegative")

    def contains(self, value, slack=0.0):
        return abs(self.mean - value) <= self.half_width + slack

    def to_dict(self):
        return _jsonable({"mean": self.mean, "half_width": self.half_width,
                          "n_effective": self.n_effective, "details": self.details})


@dataclass
class PathEnsembleSummary:
    """Per-path accumulators plus ensemble traces.

    ``payoff_batches[p, b]`` is the integral of h over the b-th of
    ``N_BATCHES`` equal post-burn-in time windows of path p.
    """

    config: SimConfig
    x0: np.ndarray
    final_state: np.ndarray
    payoff_batches: np.ndarray
    batch_durations: np.ndarray
    exits: np.ndarray
    trace_time: np.ndarray
    trace_second_moment: np.ndarray
    trace_running_average: np.ndarray
    checkpoint_times: np.ndarray
    checkpoint_v: np.ndarray | None
    hit_integrals: np.ndarray | None = None
    hit_times: np.ndarray | None = None

    @property
    def path_averages(self):
        return self.payoff_batches.sum(axis=1) / self.batch_durations.sum()

    def exit_statistics(self):
        n = self.exits.size
        return {"paths_with_exits": int(np.count_nonzero(self.exits)),
                "total_exits": int(self.exits.sum()),
                "fraction": float(np.count_nonzero(self.exits)) / n}

    def write_trace_csv(self, path):
        with open(path, "w") as fh:
            fh.write("time,second_moment,running_average\n")
            for t, m, r in zip(self.trace_time, self.trace_second_moment, self.trace_running_average):
                fh.write(f"{repr(float(t))},{repr(float(m))},{repr(float(r))}\n")


def _path_streams(seed, first, count):
    """Noise and control-sampling generators for paths first .. first+count-1."""
    noise, pick = [], []
    for p in range(first, first + count):
        noise.append(np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(p, 0)))))
        pick.append(np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(p, 1)))))
    return noise, pick


def _pairwise_mean(a, axis=0):
    # np.add.reduce uses pairwise summation along a contiguous axis
    a = np.moveaxis(np.asarray(a, dtype=np.float64), axis, -1)
    return np.add.reduce(np.ascontiguousarray(a), axis=-1) / a.shape[-1]


def batch_means(samples, n_batches=N_BATCHES, level=0.95):
    """Mean and Student-t half-width from contiguous batch means of iid samples."""
    samples = np.asarray(samples, dtype=np.float64)
    mean = float(_pairwise_mean(samples))
    nb = min(n_batches, samples.size)
    if samples.size < 2 or np.ptp(samples) == 0.0:
        return mean, 0.0, nb
    groups = np.array([_pairwise_mean(g) for g in np.array_split(samples, nb)])
    sd = float(np.std(groups, ddof=1))
    return mean, float(stats.t.ppf(0.5 + level / 2, nb - 1) * sd / math.sqrt(nb)), nb


def _check_problem(problem, strategies, x0):
    if not isinstance(problem, GameProblem):
        raise InvalidInputError("Monte Carlo validation needs a GameProblem")
    if not isinstance(strategies, StrategyField):
        raise InvalidInputError("strategies must be a StrategyField")
    m1, m2 = problem.shape
    if strategies.p1.shape[1] != m1 or (strategies.p2 is not None and strategies.p2.shape[1] != m2):
        raise InvalidInputError("strategy field does not match the problem's control sets")
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x0.size != problem.dim:
        raise InvalidInputError(f"x0 must have {problem.dim} components")
    if np.any(np.abs(x0) > strategies.grid.radius):
        raise InvalidInputError("x0 lies outside the grid domain")
    return x0


def _controls(problem, strategies, x, mode, u_draws):
    """Per-path drift (M, d) and payoff (M,) under the interpolated strategies."""
    m1, m2 = problem.shape
    M = x.shape[0]
    if m1 * m2 == 1:
        u1, u2 = problem.u1.points[0], problem.u2.points[0]
        return (np.broadcast_to(problem.drift(x, u1, u2), x.shape),
                np.broadcast_to(problem.payoff(x, u1, u2), (M,)))
    p1, p2 = strategies.interpolate(x)
    if p2 is None:
        p2 = np.ones((M, 1)) if m2 == 1 else np.full((M, m2), 1.0 / m2)
    B = problem.drift_table(x)  # (M, m1, m2, d)
    H = problem.payoff_table(x)  # (M, m1, m2)
    if mode == "mean_drift":
        return np.einsum("mi,mj,mijd->md", p1, p2, B), np.einsum("mi,mj,mij->m", p1, p2, H)
    i = _sample(p1, u_draws[:, 0])
    j = _sample(p2, u_draws[:, 1])
    rows = np.arange(M)
    return B[rows, i, j], H[rows, i, j]


def _sample(p, u):
    cdf = np.cumsum(p, axis=1)
    cdf[:, -1] = np.inf  # guard against rounding in the last bin
    return np.argmax(u[:, None] < cdf, axis=1)


def _segment_hits(a, b, r):
    """Does the segment from a to b pass within distance r of the origin?"""
    d = b - a
    dd = np.einsum("md,md->m", d, d)
    s = np.where(dd > 0, -np.einsum("md,md->m", a, d) / np.where(dd > 0, dd, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    closest = a + s[:, None] * d
    return np.einsum("md,md->m", closest, closest) <= r * r


def _simulate_block(problem, strategies, cfg, x0, first, count, checkpoint_steps, hit):
    d = problem.dim
    R = strategies.grid.radius
    dt = cfg.dt_sim
    sqdt = math.sqrt(dt)
    n_steps, burn = cfg.n_steps, cfg.burn_steps
    edges = burn + np.linspace(0, n_steps - burn, N_BATCHES + 1).round().astype(np.int64)
    batch_of_step = np.searchsorted(edges, np.arange(n_steps), side="right") - 1
    noise_rng, pick_rng = _path_streams(cfg.seed, first, count)
    mixed = problem.shape[0] * problem.shape[1] > 1 and cfg.mode == "sample_pure"
    lyap = problem.lyapunov

    x = np.repeat(x0[None, :], count, axis=0)
    payoff_batches = np.zeros((count, N_BATCHES))
    exits = np.zeros(count, dtype=np.int64)
    moments = np.zeros(n_steps + 1)
    running = np.zeros(n_steps + 1)  # ensemble payoff at each step
    moments[0] = _pairwise_mean(np.einsum("md,md->m", x, x))
    ck_v = None
    if lyap is not None and len(checkpoint_steps):
        ck_v = np.zeros((count, len(checkpoint_steps)))
        col_of = {k: c for c, k in enumerate(checkpoint_steps)}
        if 0 in col_of:
            ck_v[:, col_of[0]] = lyap.V(x)
    else:
        col_of = {}
    if hit is not None:
        beta, radii = hit
        hit_int = np.zeros((count, len(radii)))
        hit_time = np.full((count, len(radii)), np.nan)
        alive = np.einsum("md,md->m", x, x)[:, None] > np.asarray(radii)[None, :] ** 2
        hit_time[~alive] = 0.0

    for start in range(0, n_steps, CHUNK_STEPS):
        c = min(CHUNK_STEPS, n_steps - start)
        xi = np.stack([g.standard_normal((c, d)) for g in noise_rng], axis=0)
        ud = np.stack([g.random((c, 2)) for g in pick_rng], axis=0) if mixed else None
        for s in range(c):
            k = start + s
            b, h = _controls(problem, strategies, x, cfg.mode, None if ud is None else ud[:, s])
            sig = np.asarray(problem.sigma(x), dtype=np.float64)
            dw = np.einsum("mde,me->md", np.broadcast_to(sig, (count, d, d)), xi[:, s]) * sqdt
            x_new = x + b * dt + dw
            if hit is not None:
                hit_int += np.where(alive, (h - beta)[:, None] * dt, 0.0)
                for q, r in enumerate(radii):
                    newly = alive[:, q] & _segment_hits(x, x_new, r)
                    hit_time[newly, q] = (k + 1) * dt
                    alive[newly, q] = False
            out = np.abs(x_new) > R
            if out.any():
                exits += out.any(axis=1)
                x_new = np.clip(x_new, -R, R)
            if k >= burn:
                payoff_batches[:, batch_of_step[k]] += h * dt
            running[k] = _pairwise_mean(h)
            x = x_new
            moments[k + 1] = _pairwise_mean(np.einsum("md,md->m", x, x))
            if (k + 1) in col_of:
                ck_v[:, col_of[k + 1]] = lyap.V(x)
    out = {"x": x, "payoff_batches": payoff_batches, "exits": exits, "moments": moments,
           "running": running, "ck_v": ck_v, "durations": np.diff(edges) * dt}
    if hit is not None:
        out["hit_int"], out["hit_time"] = hit_int, hit_time
    return out


def simulate_paths(problem, strategies: StrategyField, config: SimConfig, x0, checkpoints=None,
                   _hit=None) -> PathEnsembleSummary:
    """Euler-Maruyama ensemble from x0 under the given strategy field.

    Paths leaving the grid box are projected back onto it and the exits are
    counted. ``checkpoints`` are times at which V(X_t) is stored per path
    (only when the problem carries a Lyapunov certificate).
    """
    x0 = _check_problem(problem, strategies, x0)
    cfg = config
    ck_times = np.sort(np.asarray([] if checkpoints is None else checkpoints, dtype=np.float64))
    ck_steps = [int(round(t / cfg.dt_sim)) for t in ck_times]
    if any(k < 0 or k > cfg.n_steps for k in ck_steps):
        raise InvalidInputError("checkpoint outside [0, horizon]")
    blocks = [(f, min(cfg.block_paths, cfg.n_paths - f)) for f in range(0, cfg.n_paths, cfg.block_paths)]

    def run(block):
        return _simulate_block(problem, strategies, cfg, x0, block[0], block[1], ck_steps, _hit)

    if cfg.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]

    weights = np.array([n for _, n in blocks], dtype=np.float64) / cfg.n_paths
    moments = np.einsum("b,bt->t", weights, np.stack([p["moments"] for p in parts]))
    running_h = np.einsum("b,bt->t", weights, np.stack([p["running"] for p in parts]))[:-1]
    times = np.arange(cfg.n_steps + 1) * cfg.dt_sim
    running_avg = np.concatenate([[np.nan], np.cumsum(running_h) / np.arange(1, cfg.n_steps + 1)])
    ck_v = None
    if parts[0]["ck_v"] is not None:
        ck_v = np.concatenate([p["ck_v"] for p in parts])
    summary = PathEnsembleSummary(
        config=cfg, x0=x0,
        final_state=np.concatenate([p["x"] for p in parts]),
        payoff_batches=np.concatenate([p["payoff_batches"] for p in parts]),
        batch_durations=parts[0]["durations"],
        exits=np.concatenate([p["exits"] for p in parts]),
        trace_time=times, trace_second_moment=moments, trace_running_average=running_avg,
        checkpoint_times=ck_times, checkpoint_v=ck_v,
    )
    if _hit is not None:
        summary.hit_integrals = np.concatenate([p["hit_int"] for p in parts])
        summary.hit_times = np.concatenate([p["hit_time"] for p in parts])
    return summary


def estimate_beta(problem, strategies, config: SimConfig, x0, summary=None) -> PayoffEstimate:
    """Long-run average payoff after burn-in, with a batch-means 95% interval.

    With 30 or more paths the batches are groups of whole paths; with fewer
    the post-burn-in horizon is cut into 30 windows pooled across paths.
    """
    summary = summary or simulate_paths(problem, strategies, config, x0)
    if config.n_paths >= N_BATCHES:
        mean, hw, n_eff = batch_means(summary.path_averages)
        batching = "paths"
    else:
        window = _pairwise_mean(summary.payoff_batches, axis=0) / summary.batch_durations
        mean = float(summary.path_averages.mean())
        _, hw, n_eff = batch_means(window)
        batching = "time"
    return PayoffEstimate(mean, hw, n_eff, {
        "batching": batching, "mode": config.mode, "exits": summary.exit_statistics(),
        "config": config.to_dict(), "x0": summary.x0,
    })


def estimate_bias(problem, strategies, config: SimConfig, x0, beta, r_small,
                  phi_grid=None, fail_fraction=0.01) -> PayoffEstimate:
    """E[ integral of (h - beta) up to the first entry into the r_small ball ].

    Hitting is detected per step when the straight segment between successive
    states passes within r_small of the origin. The run also tracks the ball of
    radius 2 r_small so the report shows the r-dependence. Paths that never hit
    contribute their truncated integral and are counted; the estimate is
    flagged when more than ``fail_fraction`` of them miss.
    """
    x0 = _check_problem(problem, strategies, x0)
    if not r_small > 0:
        raise InvalidInputError("r_small must be positive")
    radii = (float(r_small), 2.0 * float(r_small))
    if np.linalg.norm(x0) <= r_small:
        return PayoffEstimate(0.0, 0.0, config.n_paths, {"inside_ball": True, "r_small": r_small})
    cfg = replace(config, burn_in=0.0)
    summary = simulate_paths(problem, strategies, cfg, x0, _hit=(float(beta), radii))
    vals = summary.hit_integrals[:, 0]
    mean, hw, n_eff = batch_means(vals)
    missed = np.isnan(summary.hit_times)
    miss_frac = missed.mean(axis=0)
    by_r = []
    for q, r in enumerate(radii):
        m, w, _ = batch_means(summary.hit_integrals[:, q])
        by_r.append({"r": r, "mean": m, "half_width": w, "miss_fraction": float(miss_frac[q])})
    details = {
        "r_small": r_small, "by_radius": by_r, "missed": int(missed[:, 0].sum()),
        "flagged": bool(miss_frac[0] > fail_fraction), "exits": summary.exit_statistics(),
        "mean_hitting_time": float(np.nanmean(summary.hit_times[:, 0])) if not missed[:, 0].all() else None,
    }
    if phi_grid is not None:
        ref = _interp_field(phi_grid, x0) if hasattr(phi_grid, "grid") else float(phi_grid)
        details["grid_phi"] = ref
        details["difference"] = mean - ref
    return PayoffEstimate(mean, hw, n_eff, details)


def _interp_field(field_, x0):
    from ergodic_games.ergodic_solver import _cell_weights

    idx, wts = _cell_weights(field_.grid, x0[None, :])
    return float(wts[0] @ field_.values[idx[0]])


def check_drift_bound(problem, strategies, config: SimConfig, x0, checkpoints=None) -> DiagnosticReport:
    """E_x[V(X_t)] against k0/(2 k1) + V(x) exp(-2 k1 t) at checkpoint times."""
    cert = problem.lyapunov
    if cert is None or cert.mode != "A3":
        raise ConfigurationError("check_drift_bound needs an A3 Lyapunov certificate")
    x0 = _check_problem(problem, strategies, x0)
    if checkpoints is None:
        checkpoints = np.linspace(0.0, config.horizon, 11)
    summary = simulate_paths(problem, strategies, config, x0, checkpoints=checkpoints)
    v_x = float(cert.V(x0[None, :])[0])
    rows, passed = [], True
    for c, t in enumerate(summary.checkpoint_times):
        mean, hw, _ = batch_means(summary.checkpoint_v[:, c])
        bound = float(cert.moment_bound(v_x, t))
        ok = mean - hw <= bound
        passed &= ok
        rows.append({"t": float(t), "estimate": mean, "half_width": hw, "bound": bound,
                     "margin": bound - (mean - hw), "passed": ok})
    return DiagnosticReport("drift_bound", bool(passed), {
        "checkpoints": rows, "worst_margin": min(r["margin"] for r in rows),
        "k0": cert.k0, "k1": cert.k1, "x0": x0, "exits": summary.exit_statistics(),
    })
