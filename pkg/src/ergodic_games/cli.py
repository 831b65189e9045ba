"""Command-line interface: ``ergodic-games {solve,simulate,check,compare,list-problems}``.

Exit codes: 0 success / converged, 2 convergence or certificate failure,
1 invalid input (nothing is written in that case).
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from ergodic_games import __version__, kernels
from ergodic_games.config import (
    METHODS,
    RunConfig,
    build_problem,
    load_config,
    parse_scalar,
)
from ergodic_games.errors import ConvergenceError, ErgodicGamesError
from ergodic_games.ergodic_solver import (
    DEFAULT_ALPHAS,
    _jsonable,
    rvi_solve,
    solve_discounted,
    vanishing_discount,
    vi_march,
)
from ergodic_games.grid_fd import Discretization, Grid, read_node_csv
from ergodic_games.problem import check_lyapunov
from ergodic_games.registry import DESCRIPTIONS, REGISTRY, is_risk
from ergodic_games.risk_sensitive import compute_adversary_ball, rvi_multiplicative, solve_risk_game
from ergodic_games import sim_mc

OUT_ENV = "ERGODIC_GAMES_OUT"
EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _versions():
    import scipy

    return {"ergodic_games": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "kernel_backend": kernels.BACKEND}


def _grid(cfg: RunConfig, problem):
    g = cfg.grid
    dim = g.dim or problem.dim
    return Grid(dim, float(g.radius), int(g.n), cfg.boundary(), float(g.core_fraction))


def _out_dir(cfg: RunConfig):
    if cfg.out:
        return Path(cfg.out)
    base = Path(os.environ.get(OUT_ENV, "runs"))
    return base / f"{cfg.problem}-{cfg.method}"


def _sim_config(cfg: RunConfig):
    s = cfg.sim
    return sim_mc.SimConfig(dt_sim=float(s.dt), horizon=float(s.horizon), n_paths=int(s.n_paths),
                            burn_in=float(s.burn_in), seed=int(cfg.seed), mode=s.mode,
                            workers=int(s.workers))


def _field_artifacts(out, value, strategies, report, summary):
    value.to_csv(out / "value_field.csv")
    if strategies is not None:
        strategies.to_csv(out / "strategies.csv")
    if report is not None:
        report.write_residual_csv(out / "residuals.csv")
        summary["solve_report"] = report.to_dict()


def execute(cfg: RunConfig, out: Path, dump_games=False) -> dict:
    """Run the selected pipeline, writing artifacts into ``out``; return the summary."""
    problem = build_problem(cfg)
    grid = _grid(cfg, problem)
    scheme = cfg.grid.scheme
    summary = {"problem": cfg.problem, "method": cfg.method, "grid": grid.to_dict()}
    converged = True
    m = cfg.method
    if m == "discounted":
        res = solve_discounted(problem, grid, float(cfg.alpha), tol=cfg.tol, scheme=scheme)
        summary["psi_origin"] = res.value.origin_value
        _field_artifacts(out, res.value, res.strategies, res.report, summary)
    elif m == "vanishing_discount":
        kw = {} if cfg.residual_tol is None else {"residual_tol": cfg.residual_tol}
        sol = vanishing_discount(problem, grid, cfg.alphas or DEFAULT_ALPHAS, tol=cfg.tol,
                                 scheme=scheme, **kw)
        summary["beta"] = sol.beta
        _field_artifacts(out, sol.phi_star, sol.selectors, sol.report, summary)
    elif m == "rvi":
        kw = {} if cfg.residual_tol is None else {"residual_tol": cfg.residual_tol}
        sol = rvi_solve(problem, grid, dt=cfg.dt, t_end=float(cfg.t_end), conv_tol=cfg.conv_tol,
                        scheme=scheme, **kw)
        summary["beta"] = sol.beta
        converged = sol.report.converged
        _field_artifacts(out, sol.phi_star, sol.selectors, sol.report, summary)
    elif m == "vi":
        f, rep = vi_march(problem, grid, np.zeros(grid.size), float(cfg.beta), dt=cfg.dt,
                          t_end=float(cfg.t_end), conv_tol=cfg.conv_tol, scheme=scheme)
        summary["beta"] = float(cfg.beta)
        converged = rep.converged
        _field_artifacts(out, f, None, rep, summary)
    elif m == "risk_game":
        sol = solve_risk_game(problem, grid, dt=cfg.dt, t_end=float(cfg.t_end),
                              conv_tol=cfg.conv_tol, scheme=scheme)
        summary["beta"] = sol.beta
        converged = sol.report.converged
        _field_artifacts(out, sol.phi_star, sol.selectors, sol.report, summary)
    elif m == "risk_multiplicative":
        psi, rep = rvi_multiplicative(problem, grid, dt=cfg.dt, t_end=float(cfg.t_end),
                                      conv_tol=cfg.conv_tol, scheme=scheme)
        summary["beta"] = rep.details["beta_estimate"]
        converged = rep.converged
        _field_artifacts(out, psi, None, rep, summary)
    elif m == "simulate":
        sol = rvi_solve(problem, grid, dt=cfg.dt, t_end=float(cfg.t_end), conv_tol=cfg.conv_tol,
                        scheme=scheme)
        sc = _sim_config(cfg)
        x0 = np.asarray(cfg.sim.x0, dtype=np.float64)
        if x0.size == 1 and problem.dim > 1:
            x0 = np.full(problem.dim, float(x0[0]))
        ens = sim_mc.simulate_paths(problem, sol.selectors, sc, x0)
        est = sim_mc.estimate_beta(problem, sol.selectors, sc, x0, summary=ens)
        ens.write_trace_csv(out / "trace.csv")
        summary.update(beta=sol.beta, mc_beta=est.to_dict(), beta_difference=est.mean - sol.beta)
        if cfg.sim.bias_x0 is not None:
            bias = sim_mc.estimate_bias(problem, sol.selectors, sc, cfg.sim.bias_x0, sol.beta,
                                        cfg.sim.r_small, phi_grid=sol.phi_star)
            summary["mc_bias"] = bias.to_dict()
        _field_artifacts(out, sol.phi_star, sol.selectors, sol.report, summary)
    elif m == "check":
        summary["checks"] = _run_checks(problem, grid)
        converged = all(c["passed"] for c in summary["checks"].values())
    if dump_games and m in ("vanishing_discount", "rvi", "vi", "simulate", "discounted"):
        phi = (res.value if m == "discounted" else sol.phi_star if m != "vi" else f).values
        dump_game_matrices(out / "games.csv", problem, grid, phi, scheme)
    summary["converged"] = bool(converged)
    return summary


def dump_game_matrices(path, problem, grid, phi, scheme="hybrid"):
    """One row per node and pure control pair: the Hamiltonian matrix entry at phi."""
    disc = Discretization(problem, grid, scheme)
    G = disc.hamiltonian(np.asarray(phi, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write(",".join(["node"] + [f"x{k}" for k in range(grid.dim)] + ["i", "j", "entry"]) + "\n")
        for k in np.flatnonzero(disc.active):
            xs = ",".join(repr(float(v)) for v in grid.nodes[k])
            for i in range(G.shape[1]):
                for j in range(G.shape[2]):
                    fh.write(f"{k},{xs},{i},{j},{repr(float(G[k, i, j]))}\n")


def _run_checks(problem, grid):
    out = {}
    x = grid.nodes
    if is_risk(problem.name) or hasattr(problem, "flatness") and not hasattr(problem, "lyapunov"):
        rng = np.random.default_rng(0)
        i, j = rng.integers(0, grid.size, size=(2, 2000))
        i, j = i[i != j], j[i != j]
        rep = problem.certify(np.stack([x[i], x[j]], axis=1))
        out["flatness"] = rep.to_dict()
        ball = compute_adversary_ball(problem.flatness)
        out["adversary_ball"] = {"passed": True, **ball.to_dict()}
    else:
        out["lyapunov"] = check_lyapunov(problem, x).to_dict()
    return out


def _manifest(cfg, argv, wall):
    return {"config": cfg.to_flat(), "argv": list(argv), "versions": _versions(), "wall_clock": wall}


def run(cfg: RunConfig, argv=(), dump_games=False) -> int:
    """Validate, execute and write artifacts; returns the exit status."""
    try:
        cfg.validate()
        build_problem(cfg)
    except (ErgodicGamesError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = execute(cfg, out, dump_games)
        status = EXIT_OK if summary["converged"] else EXIT_FAILED
    except ConvergenceError as exc:
        summary = {"problem": cfg.problem, "method": cfg.method, "converged": False,
                   "error": str(exc), "history": list(getattr(exc, "history", []) or [])}
        status = EXIT_FAILED
    except ErgodicGamesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if out.exists() and not any(out.iterdir()):
            out.rmdir()
        return EXIT_INVALID
    wall = time.perf_counter() - t0
    _write_json(out / "report.json", summary)
    _write_json(out / "manifest.json", _manifest(cfg, argv, wall))
    line = {k: summary[k] for k in ("problem", "method", "beta", "converged") if k in summary}
    print(json.dumps(_jsonable(line)))
    if status == EXIT_FAILED and "error" in summary:
        print(f"error: {summary['error']}", file=sys.stderr)
    return status


# ----------------------------------------------------------------------------
# compare


def _load_run(path):
    path = Path(path)
    try:
        with open(path / "report.json") as fh:
            report = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ErgodicGamesError(f"cannot read run directory {path}: {exc}") from None
    field_path = path / "value_field.csv"
    values = None
    if field_path.exists():
        values = read_node_csv(field_path)["value"]
    return report, values


def compare_runs(a, b) -> dict:
    ra, va = _load_run(a)
    rb, vb = _load_run(b)
    # the boundary policy follows the method, so it is not part of the match
    ga, gb = ({k: v for k, v in (r.get("grid") or {}).items() if k != "boundary"} for r in (ra, rb))
    if not ga or ga != gb:
        raise ErgodicGamesError("runs were computed on different grids", where="cli.compare")
    if ra.get("problem") != rb.get("problem"):
        raise ErgodicGamesError("runs refer to different problems", where="cli.compare")
    diff = {"problem": ra.get("problem"), "methods": [ra.get("method"), rb.get("method")]}
    if va is not None and vb is not None:
        d = np.abs(np.asarray(va) - np.asarray(vb))
        diff["field_max_diff"] = float(d.max())
        diff["field_mean_diff"] = float(d.mean())
        g = Grid(**{**ga, "boundary": "one_sided"})
        if d.size == g.size:
            # Dirichlet runs pin the boundary to zero, so the core is the fair region
            diff["core_max_diff"] = float(d[g.core_mask].max())
            diff["core_mean_diff"] = float(d[g.core_mask].mean())
    if "beta" in ra and "beta" in rb:
        diff["beta_diff"] = abs(float(ra["beta"]) - float(rb["beta"]))
    return diff


# ----------------------------------------------------------------------------
# argument parsing


def _add_run_flags(p, method_default=None):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--manifest", help="re-run from a manifest.json written by a previous run")
    p.add_argument("--problem")
    p.add_argument("--method", action="append", choices=METHODS if method_default is None else None,
                   help="solver to run (exactly one)")
    p.add_argument("--radius", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--boundary", choices=("one_sided", "dirichlet_zero"))
    p.add_argument("--scheme", choices=("hybrid", "upwind"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--alphas", help="comma-separated decreasing discounts")
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--beta", type=float, help="ergodic value for --method vi")
    p.add_argument("--tol", type=float)
    p.add_argument("--conv-tol", type=float)
    p.add_argument("--residual-tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<problem>-<method>)")
    p.add_argument("--dump-games", action="store_true",
                   help="write every per-node Hamiltonian matrix at the final field to games.csv")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. problem.delta=0.25 or sim.n_paths=500")


def build_parser():
    parser = argparse.ArgumentParser(prog="ergodic-games", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", help="solve a benchmark with one method")
    _add_run_flags(solve)
    sim = sub.add_parser("simulate", help="solve by RVI, then Monte Carlo under the selectors")
    _add_run_flags(sim, method_default="simulate")
    sim.add_argument("--n-paths", type=int)
    sim.add_argument("--horizon", type=float)
    sim.add_argument("--dt-sim", type=float)
    sim.add_argument("--x0", help="start state, comma-separated")
    sim.add_argument("--bias-x0", help="also estimate the bias at this state")
    sim.add_argument("--mode", choices=sim_mc.MODES)
    check = sub.add_parser("check", help="verify the problem's certificates on the grid")
    _add_run_flags(check, method_default="check")
    cmp_ = sub.add_parser("compare", help="diff two run directories")
    cmp_.add_argument("run_a")
    cmp_.add_argument("run_b")
    sub.add_parser("list-problems", help="show the built-in benchmarks")
    return parser


def _config_from_args(args) -> RunConfig:
    if args.manifest:
        with open(args.manifest) as fh:
            flat = json.load(fh)["config"]
        flat.pop("out", None)
        cfg = RunConfig.from_flat(flat)
    elif args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    if args.command in ("simulate", "check"):
        if args.method:
            raise ErgodicGamesError(f"{args.command} does not take --method")
        cfg.method = args.command
    elif args.method:
        cfg.method = args.method if len(args.method) > 1 else args.method[0]
    for flag, attr in (("problem", "problem"), ("alpha", "alpha"), ("dt", "dt"), ("t_end", "t_end"),
                       ("beta", "beta"), ("tol", "tol"), ("conv_tol", "conv_tol"),
                       ("residual_tol", "residual_tol"), ("seed", "seed"), ("out", "out")):
        v = getattr(args, flag)
        if v is not None:
            setattr(cfg, attr, v)
    if args.alphas:
        cfg.alphas = [float(a) for a in args.alphas.split(",")]
    for flag, attr in (("radius", "radius"), ("n", "n"), ("dim", "dim"), ("boundary", "boundary"),
                       ("scheme", "scheme")):
        v = getattr(args, flag)
        if v is not None:
            setattr(cfg.grid, attr, v)
    if args.command == "simulate":
        for flag, attr in (("n_paths", "n_paths"), ("horizon", "horizon"), ("dt_sim", "dt"),
                           ("mode", "mode")):
            v = getattr(args, flag)
            if v is not None:
                setattr(cfg.sim, attr, v)
        if args.x0:
            cfg.sim.x0 = [float(v) for v in args.x0.split(",")]
        if args.bias_x0:
            cfg.sim.bias_x0 = [float(v) for v in args.bias_x0.split(",")]
    if args.set:
        flat = cfg.to_flat()
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ErgodicGamesError(f"--set expects KEY=VALUE, got {item!r}")
            flat[key.strip()] = parse_scalar(value) if "," not in value else [
                parse_scalar(v) for v in value.split(",")]
        cfg = RunConfig.from_flat(flat)
    return cfg


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    if args.command == "list-problems":
        for name in REGISTRY:
            print(f"{name:12s}  {DESCRIPTIONS.get(name, '')}")
        return EXIT_OK
    if args.command == "compare":
        try:
            diff = compare_runs(args.run_a, args.run_b)
        except ErgodicGamesError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        print(json.dumps(diff, indent=2, sort_keys=True))
        return EXIT_OK
    try:
        cfg = _config_from_args(args)
    except (ErgodicGamesError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return run(cfg, argv, dump_games=getattr(args, "dump_games", False))


if __name__ == "__main__":
    sys.exit(main())
