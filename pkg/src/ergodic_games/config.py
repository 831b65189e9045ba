"""Run configuration: flat ``key = value`` text with dotted sections.

Example::

    problem = ou-game-1d
    problem.delta = 0.5
    method = rvi
    grid.radius = 6
    grid.n = 241
    t_end = 20
    sim.n_paths = 2000

Numbers are decimal with optional exponent; comma-separated values become
lists. ``problem = inline`` builds a game from ``inline.*`` expressions.
"""

from __future__ import annotations

import ast
import re
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ergodic_games.errors import ConfigurationError, InvalidInputError
from ergodic_games.problem import ControlSet, GameProblem, LyapunovCertificate, constant_sigma
from ergodic_games.registry import REGISTRY, get_problem, is_risk

METHODS = ("discounted", "vanishing_discount", "vi", "rvi", "risk_game",
           "risk_multiplicative", "simulate", "check")
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_INT = re.compile(r"^[+-]?\d+$")


def parse_scalar(text):
    text = text.strip()
    if _INT.match(text):
        return int(text)
    if _NUMBER.match(text) or text.lower() in ("inf", "-inf", "+inf"):
        return float(text)
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def parse_value(text):
    if "," in text:
        return [parse_scalar(t) for t in text.split(",") if t.strip()]
    return parse_scalar(text)


def parse_config_text(text, source="<config>"):
    """Flat dict of dotted keys; duplicate keys are an error."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"expected 'key = value'", where=f"{source}:{lineno}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not re.match(r"^[A-Za-z_][\w.-]*$", key):
            raise ConfigurationError(f"bad key {key!r}", where=f"{source}:{lineno}")
        if key in out:
            raise ConfigurationError(f"duplicate key {key!r}", where=f"{source}:{lineno}")
        out[key] = parse_value(value)
    return out


def format_config(flat):
    lines = []
    for key in sorted(flat):
        v = flat[key]
        if isinstance(v, (list, tuple)):
            v = ", ".join(_fmt(x) for x in v)
        else:
            v = _fmt(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class GridSpec:
    radius: float = 6.0
    n: int = 241
    dim: Optional[int] = None
    boundary: Optional[str] = None
    scheme: str = "hybrid"
    core_fraction: float = 0.8


@dataclass
class SimSpec:
    dt: float = 1e-3
    horizon: float = 20.0
    n_paths: int = 1000
    burn_in: float = 0.1
    mode: str = "sample_pure"
    x0: list = field(default_factory=lambda: [0.0])
    bias_x0: Optional[list] = None
    r_small: float = 0.05
    workers: int = 1


@dataclass
class RunConfig:
    problem: str = "ou1d"
    method: str = "rvi"
    problem_params: dict = field(default_factory=dict)
    inline: dict = field(default_factory=dict)
    grid: GridSpec = field(default_factory=GridSpec)
    sim: SimSpec = field(default_factory=SimSpec)
    alpha: float = 0.25
    alphas: Optional[list] = None
    dt: Optional[float] = None
    t_end: float = 20.0
    beta: Optional[float] = None
    tol: float = 1e-8
    conv_tol: float = 1e-5
    residual_tol: Optional[float] = None
    seed: int = 0
    out: Optional[str] = None

    def validate(self):
        if isinstance(self.method, (list, tuple)):
            raise InvalidInputError(f"exactly one method per run, got {list(self.method)}")
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.problem != "inline" and self.problem not in REGISTRY:
            raise InvalidInputError(f"unknown problem {self.problem!r}; known: {sorted(REGISTRY)}")
        risk = self.problem != "inline" and is_risk(self.problem)
        if risk and self.method not in ("risk_game", "risk_multiplicative", "check"):
            raise InvalidInputError(f"method {self.method} does not apply to the risk-sensitive problem")
        if not risk and self.method in ("risk_game", "risk_multiplicative"):
            raise InvalidInputError(f"method {self.method} needs a risk-sensitive problem")
        if self.method == "vi" and self.beta is None:
            raise InvalidInputError("method vi needs beta")
        if self.grid.n < 3 or self.grid.n % 2 == 0:
            raise InvalidInputError("grid.n must be odd and >= 3")
        if not self.grid.radius > 0:
            raise InvalidInputError("grid.radius must be positive")
        if self.alphas is not None:
            self.alphas = [float(a) for a in np.atleast_1d(self.alphas)]
        return self

    def boundary(self):
        if self.grid.boundary:
            return self.grid.boundary
        return "dirichlet_zero" if self.method in ("discounted", "vanishing_discount") else "one_sided"

    def to_flat(self):
        flat = {"problem": self.problem, "method": self.method}
        for k, v in self.problem_params.items():
            flat[f"problem.{k}"] = v
        for k, v in self.inline.items():
            flat[f"inline.{k}"] = v
        for k, v in asdict(self.grid).items():
            if v is not None:
                flat[f"grid.{k}"] = v
        for k, v in asdict(self.sim).items():
            if v is not None:
                flat[f"sim.{k}"] = v
        for k in ("alpha", "alphas", "dt", "t_end", "beta", "tol", "conv_tol", "residual_tol", "seed", "out"):
            v = getattr(self, k)
            if v is not None:
                flat[k] = v
        return flat

    @classmethod
    def from_flat(cls, flat):
        cfg = cls()
        for key, value in flat.items():
            head, _, rest = key.partition(".")
            if head == "problem" and rest:
                cfg.problem_params[rest] = value
            elif head == "inline" and rest:
                cfg.inline[rest] = value
            elif head in ("grid", "sim") and rest:
                target = getattr(cfg, head)
                if rest not in target.__dataclass_fields__:
                    raise ConfigurationError(f"unknown key {key!r}")
                setattr(target, rest, _coerce(target, rest, value))
            elif not rest and key in cls.__dataclass_fields__ and key not in ("grid", "sim"):
                setattr(cfg, key, value)
            else:
                raise ConfigurationError(f"unknown key {key!r}")
        if isinstance(cfg.sim.x0, (int, float)):
            cfg.sim.x0 = [float(cfg.sim.x0)]
        if isinstance(cfg.sim.bias_x0, (int, float)):
            cfg.sim.bias_x0 = [float(cfg.sim.bias_x0)]
        return cfg


def _coerce(target, name, value):
    default = getattr(type(target)(), name)
    if isinstance(default, float) and isinstance(value, int):
        return float(value)
    return value


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config: {exc}") from None
    return RunConfig.from_flat(parse_config_text(text, source=str(path)))


# ----------------------------------------------------------------------------
# inline problems

_ALLOWED_FUNCS = {
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "sin": np.sin, "cos": np.cos,
    "tanh": np.tanh, "abs": np.abs, "minimum": np.minimum, "maximum": np.maximum,
}
_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load,
                  ast.Call, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def compile_expression(text, names):
    """Compile an arithmetic expression over ``names`` and a few numpy functions."""
    try:
        tree = ast.parse(str(text), mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"cannot parse expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigurationError(f"disallowed syntax {type(node).__name__} in {text!r}")
        if isinstance(node, ast.Name) and node.id not in names and node.id not in _ALLOWED_FUNCS:
            raise ConfigurationError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_FUNCS):
            raise ConfigurationError(f"disallowed call in {text!r}")
    code = compile(tree, "<inline>", "eval")
    return lambda env: eval(code, {"__builtins__": {}}, {**_ALLOWED_FUNCS, **env})


def _points(spec, key):
    if spec is None:
        return None
    rows = spec if isinstance(spec, list) else [spec]
    return np.array([[float(v)] for v in rows])


def inline_problem(inline: dict) -> GameProblem:
    """Game from expressions in x (or x0, x1), u1, u2.

    Keys: dim, drift (one expression, or a list with one per component),
    sigma (a scalar, or d*d row-major entries), payoff, u1 / u2 (scalar
    control points), lyapunov.V with lyapunov.k0/k1/k2.
    """
    try:
        dim = int(inline.get("dim", 1))
        names = {"x", "u1", "u2"} | {f"x{k}" for k in range(dim)}
        drift_src = inline["drift"]
        drift_src = drift_src if isinstance(drift_src, list) else [drift_src]
        if len(drift_src) != dim:
            raise ConfigurationError("inline.drift needs one expression per dimension")
        drift_fns = [compile_expression(s, names) for s in drift_src]
        payoff_fn = compile_expression(inline["payoff"], names)
    except KeyError as exc:
        raise ConfigurationError(f"inline problem is missing {exc.args[0]!r}") from None
    sig = np.atleast_1d(np.asarray(inline.get("sigma", np.sqrt(2.0)), dtype=np.float64))
    sig = sig[0] * np.eye(dim) if sig.size == 1 else sig.reshape(dim, dim)

    def env(x, u1, u2):
        e = {"x": x[..., 0], "u1": float(u1[0]), "u2": float(u2[0])}
        e.update({f"x{k}": x[..., k] for k in range(dim)})
        return e

    def drift(x, u1, u2):
        e = env(x, u1, u2)
        return np.stack([np.broadcast_to(f(e), x.shape[:-1]) for f in drift_fns], axis=-1)

    def payoff(x, u1, u2):
        return np.broadcast_to(payoff_fn(env(x, u1, u2)), x.shape[:-1])

    u1 = _points(inline.get("u1"), "u1")
    u2 = _points(inline.get("u2"), "u2")
    lyap = None
    if "lyapunov.V" in inline:
        v_fn = compile_expression(inline["lyapunov.V"], {"x"} | {f"x{k}" for k in range(dim)})

        def V(x):
            x = np.asarray(x, dtype=np.float64)
            e = {"x": x[..., 0], **{f"x{k}": x[..., k] for k in range(dim)}}
            return np.broadcast_to(v_fn(e), x.shape[:-1])

        lyap = LyapunovCertificate(V, float(inline["lyapunov.k0"]), float(inline["lyapunov.k1"]),
                                   float(inline["lyapunov.k2"]))
    return GameProblem(
        dim=dim, drift=drift, sigma=constant_sigma(sig), payoff=payoff,
        u1=ControlSet(u1, 1) if u1 is not None else ControlSet.singleton(1),
        u2=ControlSet(u2, 2) if u2 is not None else ControlSet.singleton(2),
        lyapunov=lyap, name="inline",
    )


def build_problem(cfg: RunConfig):
    if cfg.problem == "inline":
        return inline_problem(cfg.inline)
    params = dict(cfg.problem_params)
    if is_risk(cfg.problem):
        params.setdefault("radius", cfg.grid.radius)
    try:
        return get_problem(cfg.problem, **params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {cfg.problem}: {exc}") from None
