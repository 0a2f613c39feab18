"""Estimating and bounding the probability of the bad event

    B = { exists y' != y, x' in N(x, delta) : F(x')_{y'} >= p }

from attack witnesses (one-sided), Markov bounds from the adversarial risk,
Chebyshev intervals on the sampled frequency, and exhaustive grid
certification in low dimension.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import attacks, losses
from .attacks import AttackBudget
from .losses import LossKind
from .nn_core import DEFAULT_BOX, NetworkParams, probs
from .training import Dataset

MAX_GRID_DIM = 3


class UnsupportedDimensionError(ValueError):
    pass


class MarkovViolation(AssertionError):
    """Raised when an empirical Markov inequality fails; always a bug."""


@dataclass(frozen=True)
class SeparationSpec:
    p: float
    q: float = 0.0
    delta: float = 0.1
    metric: str = "linf"

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError("p must lie in (0, 1]")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.metric not in attacks.NORMS:
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass(frozen=True)
class SeparationEstimate:
    """Sampled bad-event frequency plus, once filled, its Chebyshev interval.

    Attack-founded counts are lower-bound evidence (``one_sided``): an attack
    that fails does not prove the event absent.
    """

    successes: int
    t: int
    mu_hat: float
    epsilon: Optional[float] = None
    alpha: Optional[float] = None
    upper: Optional[float] = None
    lower: Optional[float] = None
    one_sided: bool = True
    witnesses: tuple = field(default=(), repr=False)

    def as_dict(self) -> dict:
        return {
            "successes": self.successes,
            "t": self.t,
            "mu_hat": float(self.mu_hat),
            "epsilon": None if self.epsilon is None else float(self.epsilon),
            "alpha": None if self.alpha is None else float(self.alpha),
            "upper": None if self.upper is None else float(self.upper),
            "lower": None if self.lower is None else float(self.lower),
        }


def _rational(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    # decimal reading of the float, so 0.1 means 1/10
    return Fraction(repr(float(v)))


def chebyshev_interval(successes: int, t: int, epsilon, exact: bool = False) -> SeparationEstimate:
    """Two-sided interval ``mu_hat -/+ epsilon`` holding with probability at
    least ``alpha = 1 - 1/(4 epsilon^2 t)`` (variance of a Bernoulli mean is
    at most 1/(4t)).

    Arithmetic is rational throughout; ``exact=True`` returns Fractions,
    otherwise the correctly rounded floats.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if not 0 <= successes <= t:
        raise ValueError("successes must lie in [0, t]")
    eps = _rational(epsilon)
    if not 0 < eps < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    mu = Fraction(successes, t)
    alpha = 1 - 1 / (4 * eps * eps * t)
    upper = min(mu + eps, Fraction(1))
    lower = max(mu - eps, Fraction(0))
    conv = (lambda v: v) if exact else float
    return SeparationEstimate(successes, t, conv(mu), conv(eps), conv(alpha), conv(upper), conv(lower))


def fill_interval(est: SeparationEstimate, epsilon, exact: bool = False) -> SeparationEstimate:
    filled = chebyshev_interval(est.successes, est.t, epsilon, exact)
    return SeparationEstimate(filled.successes, filled.t, filled.mu_hat, filled.epsilon, filled.alpha,
                              filled.upper, filled.lower, est.one_sided, est.witnesses)


def min_samples(epsilon, alpha) -> int:
    """Smallest t with 1/(4 epsilon^2 t) <= 1 - alpha."""
    eps, a = _rational(epsilon), _rational(alpha)
    return math.ceil(1 / (4 * eps * eps * (1 - a)))


def markov_bound(kind: LossKind, rho: float, p: float) -> float:
    """Upper bound ``rho / tau(1 - p)`` on Pr[B]; +inf when tau vanishes."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    floor = losses.tau(kind, 1.0 - p)
    if floor == 0.0:
        return math.inf
    return rho / floor


def estimate_bad_event(params: NetworkParams, data: Dataset, p: float, delta: float,
                       budget: AttackBudget) -> SeparationEstimate:
    """Count samples for which a ``p``-confident wrong point is found within ``delta``.

    Each witness is re-verified (feasible, and p-confident for a wrong label)
    before it is counted.
    """
    if budget.radius != delta:
        raise ValueError(f"budget radius {budget.radius} must equal delta {delta}")
    witnesses = []
    for i in range(len(data)):
        x, y = data.X[i], int(data.y[i])
        res = attacks.p_confident_attack(params, x, y, p, attacks.for_sample(budget, i))
        if res is None:
            continue
        pr = probs(params, res.point)
        wrong = np.delete(pr, y)
        if not (attacks.in_budget(x, res.point, budget) and wrong.max() >= p):
            raise AssertionError(f"sample {i}: witness failed re-verification")
        witnesses.append((i, res))
    n = len(data)
    return SeparationEstimate(len(witnesses), n, len(witnesses) / n, witnesses=tuple(witnesses))


@dataclass(frozen=True)
class MarkovReport:
    rho_hat: float
    tau: float
    frequency: float
    bound: float
    witnesses: int
    t: int
    min_witness_kappa: Optional[float]

    @property
    def margin(self) -> float:
        return self.bound - self.frequency


def empirical_markov_check(params: NetworkParams, data: Dataset, kind: LossKind, p: float,
                           budget: AttackBudget, rtol: float = 1e-12) -> MarkovReport:
    """Check ``freq(B) <= rho_hat / tau(1-p)`` and ``kappa_i >= tau(1-p)`` for every witness.

    A witness point is passed to the inner maximiser as a warm start, so its
    loss lower-bounds that sample's worst-case estimate; both inequalities
    then hold exactly on the sample.  ``rtol`` only absorbs the rounding gap
    between ``-log softmax`` and ``log(1 - p)``.
    """
    if not losses.has_useful_tau(kind):
        raise ValueError(f"{kind} has no usable loss lower bound")
    est = estimate_bad_event(params, data, p, budget.radius, budget)
    warm = {i: res.point for i, res in est.witnesses}
    kappas = np.array([
        attacks.kappa_hat(params, data.X[i], int(data.y[i]), kind, attacks.for_sample(budget, i),
                          init=warm.get(i))
        for i in range(len(data))
    ])
    rho = float(kappas.mean())
    floor = losses.tau(kind, 1.0 - p)
    slack = rtol * max(1.0, abs(floor))
    wk = [float(kappas[i]) for i in warm]
    for i in warm:
        if kappas[i] < floor - slack:
            raise MarkovViolation(f"sample {i}: kappa_hat {kappas[i]} < tau(1-p) {floor}")
    freq = est.mu_hat
    bound = math.inf if floor == 0 else rho / floor
    if freq > bound * (1 + rtol) + rtol:
        raise MarkovViolation(f"frequency {freq} exceeds rho_hat/tau = {bound}")
    return MarkovReport(rho, floor, freq, bound, est.successes, est.t, min(wk) if wk else None)


def lattice_offsets(radius: float, pitch: float, dim: int, metric: str = "linf") -> np.ndarray:
    """Integer offsets k with ``pitch * k`` inside the radius ball."""
    m = int(math.floor(radius / pitch + 1e-9))
    ks = np.array(list(itertools.product(range(-m, m + 1), repeat=dim)), dtype=np.int64)
    if metric == "l2":
        ks = ks[np.linalg.norm(ks * pitch, axis=1) <= radius * (1 + 1e-12)]
    return ks


def ball_grid(x, radius: float, pitch: float, metric: str = "linf", box=DEFAULT_BOX) -> np.ndarray:
    """Lattice points ``x + pitch * k`` in the ball and the box."""
    x = np.asarray(x, dtype=np.float64)
    pts = x + pitch * lattice_offsets(radius, pitch, x.shape[0], metric)
    keep = np.all((pts >= box[0]) & (pts <= box[1]), axis=1)
    return pts[keep]


def certify_separation_sample(params: NetworkParams, points, spec: SeparationSpec, grid_pitch: float,
                              labels=None, box=DEFAULT_BOX) -> np.ndarray:
    """Exhaustive check of ``(p, delta)``-goodness on a lattice of each ball.

    A point is good iff no lattice point of its ``delta``-ball is
    ``p``-confident for a label other than its own.  Labels default to the
    model's prediction at the point.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] > MAX_GRID_DIM:
        raise UnsupportedDimensionError(f"grid certification supports d <= {MAX_GRID_DIM}")
    if labels is None:
        labels = np.argmax(probs(params, points), axis=1)
    good = np.zeros(len(points), dtype=bool)
    for i, (x, y) in enumerate(zip(points, labels)):
        pr = probs(params, ball_grid(x, spec.delta, grid_pitch, spec.metric, box))
        pr[:, int(y)] = -np.inf
        good[i] = not np.any(pr >= spec.p)
    return good
