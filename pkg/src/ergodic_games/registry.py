"""Built-in benchmark problems, addressable by name from configs and the CLI."""

import numpy as np

from ergodic_games.problem import (
    ControlSet,
    FlatnessCertificate,
    GameProblem,
    LyapunovCertificate,
    constant_sigma,
)
from ergodic_games.risk_sensitive import RiskProblem

SQRT2 = np.sqrt(2.0)


def _v_quadratic(x):
    return 1.0 + np.sum(np.asarray(x) ** 2, axis=-1)


def ou1d(rate=1.0, shift=0.0):
    """dX = -rate X dt + sqrt(2) dW, h = x^2 + shift. beta = 1/rate + shift."""

    def drift(x, u1, u2):
        return -rate * x

    def payoff(x, u1, u2):
        return x[..., 0] ** 2 + shift

    k1 = rate
    return GameProblem(
        dim=1, drift=drift, sigma=constant_sigma([[SQRT2]]), payoff=payoff,
        u1=ControlSet.singleton(1), u2=ControlSet.singleton(2),
        lyapunov=LyapunovCertificate(_v_quadratic, k0=2.0 + 2.0 * k1, k1=k1, k2=1.0 + shift),
        name="ou1d",
    )


def ou_game_1d(delta=0.5, coupling=1.0, base=0.5):
    """Two-player OU game: b = -x + u1 - u2, h = x^2 + coupling u1 u2 + base.

    Controls {-delta, delta} for both players. Near the origin the coupling term
    makes the per-node game matching-pennies-like (mixed); farther out the drift
    term dominates and saddle points are pure.
    """
    pts = np.array([[-delta], [delta]])

    def drift(x, u1, u2):
        return -x + u1[0] - u2[0]

    def payoff(x, u1, u2):
        return x[..., 0] ** 2 + coupling * u1[0] * u2[0] + base

    # LV = 2x(-x + u1 - u2) + 2 <= -x^2 + (2 delta)^2 + 2 = k0 - 2 k1 V with k1 = 1/2
    k0 = 3.0 + 4.0 * delta**2
    k2 = max(1.0, base + coupling * delta**2)
    return GameProblem(
        dim=1, drift=drift, sigma=constant_sigma([[SQRT2]]), payoff=payoff,
        u1=ControlSet(pts, 1), u2=ControlSet(pts, 2),
        lyapunov=LyapunovCertificate(_v_quadratic, k0=k0, k1=0.5, k2=k2),
        name="ou-game-1d",
    )


def risk_ou_1d(theta=3.0 / 16.0, radius=6.0, c=0.5):
    """Uncontrolled OU (b = -x, a = 2) with risk-sensitive payoff theta x^2.

    Eigenpair: psi* = exp(k x^2), beta = 2k with k = (1 - sqrt(1 - 4 theta)) / 4.
    The payoff is only Lipschitz on the box, so lip_h = 2 theta radius. Any
    c <= 2 certifies flatness here; the default 0.5 keeps the adversary ball
    wide enough to contain a(x) grad(phi*) over the whole box.
    """

    def drift(x, u):
        return -x

    def payoff(x, u):
        return theta * x[..., 0] ** 2

    cert = FlatnessCertificate(Q=[[1.0]], c=c, lip_h=2.0 * theta * radius, lip_ainv=0.0, sigma_sup=2.0)
    return RiskProblem(
        dim=1, drift=drift, sigma=constant_sigma([[SQRT2]]), payoff=payoff,
        controls=ControlSet.singleton(1), flatness=cert, name="risk-ou-1d",
    )


def ou2d(rate=1.0):
    """Separable 2-D OU with h = |x|^2: beta = 2 / rate, bias |x|^2 / 2."""

    def drift(x, u1, u2):
        return -rate * x

    def payoff(x, u1, u2):
        return np.sum(x**2, axis=-1)

    return GameProblem(
        dim=2, drift=drift, sigma=constant_sigma(SQRT2 * np.eye(2)), payoff=payoff,
        u1=ControlSet.singleton(1), u2=ControlSet.singleton(2),
        # tight value is k0 = 4 + 2 rate; the slack absorbs finite-difference
        # rounding in the 2-D Hessian of V
        lyapunov=LyapunovCertificate(_v_quadratic, k0=4.5 + 2.0 * rate, k1=rate, k2=1.0),
        name="ou2d",
    )


REGISTRY = {
    "ou1d": ou1d,
    "ou-game-1d": ou_game_1d,
    "risk-ou-1d": risk_ou_1d,
    "ou2d": ou2d,
}

DESCRIPTIONS = {
    "ou1d": "1-D Ornstein-Uhlenbeck, h = x^2, trivial controls (beta = 1, bias x^2/2)",
    "ou-game-1d": "1-D OU game, b = -x + u1 - u2, h = x^2 + u1 u2 + 1/2",
    "risk-ou-1d": "risk-sensitive OU, h = (3/16) x^2 (beta = 1/4, bias x^2/8)",
    "ou2d": "2-D separable OU, h = |x|^2 (beta = 2)",
}


def is_risk(name):
    return name.startswith("risk-")


def get_problem(name, **params):
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**params)
