"""Game instances and numerical audits of the standing stability assumptions.

User-supplied maps are vectorized over leading axes:

* ``drift(x, u1, u2)``: ``x`` has shape ``(..., d)``, ``u1``/``u2`` are single
  control points (1-D arrays); returns ``(..., d)``.
* ``sigma(x)``: returns ``(..., d, d)``.
* ``payoff(x, u1, u2)``: returns ``(...)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ergodic_games.errors import ConfigurationError, InvalidInputError
from ergodic_games.matrix_game import MixedStrategy

DEFAULT_ATOL = 1e-8
DEFAULT_RTOL = 1e-6
DEFAULT_FD_STEP = 1e-4


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Finite discretization of one player's compact control space."""

    points: np.ndarray
    player: int = 1

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InvalidInputError("control set must be a nonempty list of points")
        if self.player not in (1, 2):
            raise InvalidInputError(f"player index must be 1 or 2, got {self.player}")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise InvalidInputError("control points must be pairwise distinct")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @classmethod
    def singleton(cls, player: int) -> "ControlSet":
        return cls(np.zeros((1, 1)), player)


@dataclass
class LyapunovCertificate:
    V: Callable[[np.ndarray], np.ndarray]
    k0: float
    k1: float
    k2: float
    mode: str = "A3"
    g: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.mode not in ("A3", "A3prime"):
            raise InvalidInputError(f"unknown certificate mode {self.mode!r}")
        if min(self.k0, self.k1, self.k2) <= 0:
            raise InvalidInputError("k0, k1, k2 must be positive")
        if self.mode == "A3prime" and self.g is None:
            raise InvalidInputError("mode A3prime requires g")

    def moment_bound(self, v_x, t):
        """Right side of E_x[V(X_t)] <= k0/(2 k1) + V(x) exp(-2 k1 t)."""
        return self.k0 / (2 * self.k1) + v_x * np.exp(-2 * self.k1 * np.asarray(t))


@dataclass
class FlatnessCertificate:
    """Asymptotic-flatness constants.

    Only ``Q`` and ``c`` are validated here; the constant inequality
    ``2 sigma_sup**2 lip_h lip_ainv <= c**2`` is audited by :func:`check_flatness`
    so that a failing certificate can still be reported.
    """

    Q: np.ndarray
    c: float
    lip_h: float
    lip_ainv: float
    sigma_sup: float

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=np.float64))
        if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T, atol=1e-12):
            raise InvalidInputError("Q must be a symmetric square matrix")
        if np.linalg.eigvalsh(Q).min() <= 0:
            raise InvalidInputError("Q must be positive definite")
        if self.c <= 0:
            raise InvalidInputError("c must be positive")
        if min(self.lip_h, self.lip_ainv, self.sigma_sup) < 0:
            raise InvalidInputError("Lipschitz constants and sigma_sup must be nonnegative")
        self.Q = Q

    def constant_condition(self):
        """Returns (lhs, rhs) of the constant inequality lhs <= rhs."""
        lhs = 2.0 * self.sigma_sup**2 * self.lip_h * self.lip_ainv
        return lhs, self.c**2


@dataclass(eq=False)
class GameProblem:
    dim: int
    drift: Callable
    sigma: Callable
    payoff: Callable
    u1: ControlSet
    u2: ControlSet
    lyapunov: Optional[LyapunovCertificate] = None
    flatness: Optional[FlatnessCertificate] = None
    name: str = "custom"

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInputError("dim must be a positive integer")
        if self.u1.player != 1 or self.u2.player != 2:
            raise InvalidInputError("u1 must belong to player 1 and u2 to player 2")

    @property
    def shape(self):
        return len(self.u1), len(self.u2)

    def diffusion(self, x):
        """a(x) = sigma(x) sigma(x)^T, shape (..., d, d)."""
        s = np.asarray(self.sigma(np.asarray(x, dtype=np.float64)), dtype=np.float64)
        return s @ np.swapaxes(s, -1, -2)

    def drift_table(self, x):
        """Drift at every pure control pair: (N, m1, m2, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        m1, m2 = self.shape
        out = np.empty((x.shape[0], m1, m2, self.dim))
        for i, u1 in enumerate(self.u1.points):
            for j, u2 in enumerate(self.u2.points):
                out[:, i, j] = np.broadcast_to(self.drift(x, u1, u2), (x.shape[0], self.dim))
        return out

    def payoff_table(self, x):
        """Running payoff at every pure control pair: (N, m1, m2)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        m1, m2 = self.shape
        out = np.empty((x.shape[0], m1, m2))
        for i, u1 in enumerate(self.u1.points):
            for j, u2 in enumerate(self.u2.points):
                out[:, i, j] = np.broadcast_to(self.payoff(x, u1, u2), (x.shape[0],))
        return out

    def drift_variants(self):
        """(label, x -> drift) for every pure control pair."""
        return [
            (f"u1[{i}],u2[{j}]", lambda x, u1=u1, u2=u2: self.drift(x, u1, u2))
            for i, u1 in enumerate(self.u1.points)
            for j, u2 in enumerate(self.u2.points)
        ]

    def validate(self, sample):
        """Check payoff nonnegativity and uniform ellipticity on sample points."""
        x = np.atleast_2d(np.asarray(sample, dtype=np.float64))
        h = self.payoff_table(x)
        if np.any(h < 0):
            k = int(np.argwhere(h < 0)[0, 0])
            raise InvalidInputError("payoff must be nonnegative", where=f"problem: x={x[k].tolist()}")
        _check_elliptic(self.diffusion(x), x)


def _check_elliptic(a, x):
    if not np.allclose(a, np.swapaxes(a, -1, -2), atol=1e-12):
        raise InvalidInputError("a(x) must be symmetric")
    eig = np.linalg.eigvalsh(a)
    bad = np.flatnonzero(eig.min(axis=-1) <= 0)
    if bad.size:
        raise InvalidInputError(
            "a(x) must be positive definite", where=f"problem: x={x[bad[0]].tolist()}"
        )


def constant_sigma(matrix):
    """A sigma map returning the same matrix everywhere."""
    s = np.atleast_2d(np.asarray(matrix, dtype=np.float64))

    def sigma(x):
        x = np.asarray(x)
        return np.broadcast_to(s, x.shape[:-1] + s.shape).copy()

    return sigma


def _weights(v, size):
    w = v.weights if isinstance(v, MixedStrategy) else np.asarray(v, dtype=np.float64)
    if w.shape != (size,):
        raise InvalidInputError(f"strategy has {w.size} weights, control set has {size} points")
    return w


def relax_payoff(problem: GameProblem, x, v1, v2) -> float:
    """Relaxed running payoff: the bilinear average of h over both mixtures."""
    m1, m2 = problem.shape
    w1 = _weights(v1, m1)
    w2 = _weights(v2, m2)
    table = problem.payoff_table(np.reshape(np.asarray(x, dtype=np.float64), (1, problem.dim)))[0]
    return float(w1 @ table @ w2)


@dataclass
class CertificateReport:
    name: str
    passed: bool
    worst_margin: float
    violations: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "worst_margin": float(self.worst_margin),
            "violations": self.violations,
            "details": self.details,
        }


def fd_derivatives(fn, x, step=DEFAULT_FD_STEP):
    """Centered finite-difference gradient and Hessian of a scalar map.

    Step per point is ``step * (1 + |x|)``. Returns (values, grad, hess).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    N, d = x.shape
    hs = step * (1.0 + np.linalg.norm(x, axis=1))
    f0 = np.asarray(fn(x), dtype=np.float64)
    grad = np.empty((N, d))
    hess = np.empty((N, d, d))
    eye = np.eye(d)
    for k in range(d):
        ek = hs[:, None] * eye[k]
        fp = fn(x + ek)
        fm = fn(x - ek)
        grad[:, k] = (fp - fm) / (2 * hs)
        hess[:, k, k] = (fp - 2 * f0 + fm) / hs**2
        for l in range(k + 1, d):
            el = hs[:, None] * eye[l]
            mixed = (fn(x + ek + el) - fn(x + ek - el) - fn(x - ek + el) + fn(x - ek - el)) / (
                4 * hs**2
            )
            hess[:, k, l] = hess[:, l, k] = mixed
    return f0, grad, hess


def _tolerance(lhs, rhs, atol, rtol):
    return atol + rtol * np.maximum(np.abs(lhs), np.abs(rhs))


def check_lyapunov(problem: GameProblem, sample, fd_step=DEFAULT_FD_STEP,
                   atol=DEFAULT_ATOL, rtol=DEFAULT_RTOL, n_shells=5) -> CertificateReport:
    cert = problem.lyapunov
    if cert is None:
        raise ConfigurationError("problem has no Lyapunov certificate", where="problem.check_lyapunov")
    x = np.atleast_2d(np.asarray(sample, dtype=np.float64))
    V, grad, hess = fd_derivatives(cert.V, x, fd_step)
    a = problem.diffusion(x)
    b = problem.drift_table(x)
    h = problem.payoff_table(x)

    second = 0.5 * np.einsum("nij,nji->n", a, hess)
    LV = np.einsum("nabd,nd->nab", b, grad) + second[:, None, None]
    if cert.mode == "A3":
        rhs = cert.k0 - 2 * cert.k1 * V
        weight = V
    else:
        g = np.asarray(cert.g(x), dtype=np.float64)
        rhs = cert.k0 - g
        weight = g
    drift_margin = rhs[:, None, None] - LV
    drift_tol = _tolerance(LV, rhs[:, None, None], atol, rtol)
    hmax = h.reshape(len(x), -1).max(axis=1)
    pay_rhs = cert.k2 * weight
    pay_margin = pay_rhs - hmax
    pay_tol = _tolerance(hmax, pay_rhs, atol, rtol)

    violations = []
    bad_v = np.flatnonzero(V < 1 - atol)
    for k in bad_v:
        violations.append({"x": x[k].tolist(), "condition": "V>=1", "margin": float(V[k] - 1)})
    if cert.mode == "A3prime":
        for k in np.flatnonzero(weight < 1 - atol):
            violations.append({"x": x[k].tolist(), "condition": "g>=1", "margin": float(weight[k] - 1)})
    node_drift = drift_margin.reshape(len(x), -1).min(axis=1)
    node_tol = np.min(drift_tol.reshape(len(x), -1), axis=1)
    for k in np.flatnonzero(node_drift < -node_tol):
        violations.append({"x": x[k].tolist(), "condition": "drift", "margin": float(node_drift[k])})
    for k in np.flatnonzero(pay_margin < -pay_tol):
        violations.append({"x": x[k].tolist(), "condition": "payoff", "margin": float(pay_margin[k])})

    details = {
        "mode": cert.mode,
        "n_points": int(len(x)),
        "worst_drift_margin": float(node_drift.min()),
        "worst_drift_point": x[int(node_drift.argmin())].tolist(),
        "worst_payoff_margin": float(pay_margin.min()),
        "worst_payoff_point": x[int(pay_margin.argmin())].tolist(),
    }
    if cert.mode == "A3prime":
        details["decay_trend"] = _decay_trend(x, hmax / weight, n_shells)
    worst = float(min(node_drift.min(), pay_margin.min()))
    return CertificateReport("lyapunov", not violations, worst, violations, details)


def _decay_trend(x, ratio, n_shells):
    """max(h)/g over radial shells; only a trend can be reported on a box."""
    r = np.linalg.norm(x, axis=1)
    edges = np.linspace(r.min(), r.max(), n_shells + 1)
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (r >= lo) & (r <= hi)
        if sel.any():
            rows.append({"r_lo": float(lo), "r_hi": float(hi), "max_ratio": float(ratio[sel].max())})
    return rows


def check_flatness(problem, pair_sample, atol=DEFAULT_ATOL, rtol=DEFAULT_RTOL) -> CertificateReport:
    """Evaluate the full three-term flatness expression on sampled state pairs.

    ``problem`` is anything with ``flatness``, ``sigma`` and ``drift_variants()``
    (a :class:`GameProblem` or a risk-sensitive problem).
    """
    cert = problem.flatness
    if cert is None:
        raise ConfigurationError("problem has no flatness certificate", where="problem.check_flatness")
    pairs = np.asarray(pair_sample, dtype=np.float64)
    if pairs.ndim == 2:
        pairs = pairs[..., None]
    X, Y = pairs[:, 0, :], pairs[:, 1, :]
    diff = X - Y
    same = np.all(diff == 0, axis=1)
    if same.any():
        warnings.warn(f"skipping {int(same.sum())} pair(s) with x == y", stacklevel=2)
        X, Y, diff = X[~same], Y[~same], diff[~same]
    Q = cert.Q
    sx = np.asarray(problem.sigma(X), dtype=np.float64)
    sy = np.asarray(problem.sigma(Y), dtype=np.float64)
    ds = sx - sy
    qdiff = diff @ Q
    quad = np.einsum("nd,nd->n", qdiff, diff)
    trace_term = np.einsum("nij,nkj,ki->n", ds, ds, Q)
    proj = np.einsum("nji,nj->ni", ds, qdiff)  # (sx - sy)^T Q (x - y)
    sigma_terms = trace_term - np.einsum("ni,ni->n", proj, proj) / quad
    sq = np.einsum("nd,nd->n", diff, diff)

    worst = -np.inf
    per_control = {}
    violations = []
    for label, fn in problem.drift_variants():
        db = np.asarray(fn(X), dtype=np.float64) - np.asarray(fn(Y), dtype=np.float64)
        lhs = 2 * np.einsum("nd,nd->n", db, qdiff) + sigma_terms
        excess = lhs + cert.c * sq
        tol = _tolerance(lhs, cert.c * sq, atol, rtol)
        per_control[label] = float(excess.max()) if len(excess) else -np.inf
        worst = max(worst, per_control[label])
        for k in np.flatnonzero(excess > tol):
            violations.append({"x": X[k].tolist(), "y": Y[k].tolist(), "control": label,
                               "excess": float(excess[k])})
    lhs_c, rhs_c = cert.constant_condition()
    const_ok = lhs_c <= rhs_c * (1 + rtol) + atol
    if not const_ok:
        violations.append({"condition": "constants", "lhs": lhs_c, "rhs": rhs_c})
    details = {
        "n_pairs": int(len(X)),
        "skipped_pairs": int(same.sum()),
        "max_excess_by_control": per_control,
        "max_sigma_terms": float(np.abs(sigma_terms).max()) if len(X) else 0.0,
        "constant_condition": {"lhs": lhs_c, "rhs": rhs_c, "passed": bool(const_ok)},
    }
    return CertificateReport("flatness", not violations, float(-worst), violations, details)
