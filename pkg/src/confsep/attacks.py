"""Projected gradient attacks inside a norm ball intersected with the domain box.

All attacks share one engine, :func:`ascend`, which runs PGD on a stack of
rows (samples x restarts) at once, keeps the best iterate of every row, and
always treats the unperturbed origin as a candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import losses
from .losses import CROSS_ENTROPY, LossKind
from .nn_core import DEFAULT_BOX, NetworkParams, _act_grad, _forward_cache, log_softmax, predict

NORMS = ("linf", "l2")
SCHEDULES = ("geometric", "constant")
GEOMETRIC_DECAY = 0.02


@dataclass(frozen=True)
class AttackBudget:
    norm: str = "linf"
    radius: float = 0.1
    iterations: int = 100
    restarts: int = 10
    step_size: Optional[float] = None  # None -> radius / 4
    seed: int = 0
    random_start: bool = True
    box: tuple = DEFAULT_BOX
    schedule: str = "geometric"  # or "constant"

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        if self.iterations < 1 or self.restarts < 1:
            raise ValueError("iterations and restarts must be positive")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown step schedule {self.schedule!r}")

    @property
    def step(self) -> float:
        return self.radius / 4.0 if self.step_size is None else self.step_size

    def with_radius(self, radius: float) -> "AttackBudget":
        return replace(self, radius=radius)

    def steps(self) -> np.ndarray:
        """Per-iteration step sizes; geometric decays by ``GEOMETRIC_DECAY`` overall."""
        k = np.arange(self.iterations, dtype=np.float64)
        if self.schedule == "constant":
            return np.full(self.iterations, self.step)
        return self.step * GEOMETRIC_DECAY ** (k / self.iterations)


@dataclass(frozen=True)
class AttackResult:
    point: np.ndarray
    target: Optional[int]
    achieved_confidence: float
    achieved_label: int
    success: bool
    objective: float


def derive_seed(seed: int, *keys: int) -> int:
    """Independent, reproducible child seed for (seed, keys...)."""
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) for k in keys]]).generate_state(1)[0])


def for_sample(budget: AttackBudget, index: int) -> AttackBudget:
    """Budget whose seed is tied to a sample index, so per-sample results do
    not depend on evaluation order or fan-out."""
    return replace(budget, seed=derive_seed(budget.seed, index))


# -- geometry ---------------------------------------------------------------

def _linf_bounds(x0, radius, box):
    lo, hi = x0 - radius, x0 + radius
    # nudge inward until |bound - x0| <= radius also holds after rounding
    while np.any(x0 - lo > radius):
        lo = np.where(x0 - lo > radius, np.nextafter(lo, np.inf), lo)
    while np.any(hi - x0 > radius):
        hi = np.where(hi - x0 > radius, np.nextafter(hi, -np.inf), hi)
    return np.maximum(lo, box[0]), np.minimum(hi, box[1])


def project(x0, z, budget: AttackBudget) -> np.ndarray:
    """Map ``z`` into the budget ball around ``x0`` and the domain box.

    linf clamps coordinate-wise; l2 rescales radially onto the ball and then
    clamps to the box (the clamp cannot leave the ball since ``x0`` is inside
    the box).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    lo, hi = budget.box
    if budget.norm == "linf":
        a, b = _linf_bounds(x0, budget.radius, budget.box)
        return np.minimum(np.maximum(z, a), b)
    delta = z - x0
    norm = np.linalg.norm(delta, axis=-1, keepdims=True)
    r = budget.radius
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norm > r, r / norm, 1.0)
    out = np.clip(x0 + delta * factor, lo, hi)
    # rounding in x0 + delta can leave the result a hair outside the ball
    over = np.linalg.norm(out - x0, axis=-1, keepdims=True) > r
    shrink = np.finfo(np.float64).eps
    while np.any(over):
        factor = np.where(over, factor * (1.0 - shrink), factor)
        shrink = min(2.0 * shrink, 1.0)
        out = np.clip(x0 + delta * factor, lo, hi)
        over = np.linalg.norm(out - x0, axis=-1, keepdims=True) > r
    return out


def in_budget(x0, z, budget: AttackBudget) -> bool:
    x0 = np.asarray(x0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    lo, hi = budget.box
    if np.any(z < lo) or np.any(z > hi):
        return False
    if budget.norm == "linf":
        a, b = _linf_bounds(x0, budget.radius, budget.box)
        return bool(np.all(z >= a) and np.all(z <= b))
    return bool(np.all(np.linalg.norm(z - x0, axis=-1) <= budget.radius))


def random_starts(x0, budget: AttackBudget, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` points uniform in the ball around ``x0`` (then box-projected).

    ``x0`` is one origin or ``count`` stacked origins.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.shape[-1]
    r = budget.radius
    if budget.norm == "linf":
        delta = rng.uniform(-r, r, size=(count, d))
    else:
        u = rng.normal(size=(count, d))
        u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
        delta = u * (r * rng.uniform(size=(count, 1)) ** (1.0 / d))
    return project(x0, x0 + delta, budget)


# -- engine -----------------------------------------------------------------

# objective(Z, P) -> (values (m,), dvalues/dZ (m,K), dvalues/dP (m,d) or None)
Objective = Callable[[np.ndarray, np.ndarray], tuple]


def _value_and_grad(params: NetworkParams, P, objective: Objective):
    z, hs, pre = _forward_cache(params, P)
    vals, g, gp = objective(z, P)
    for k in range(len(params.weights) - 1, -1, -1):
        g = g @ params.weights[k].T
        if k > 0:
            g = g * _act_grad(pre[k - 1], hs[k], params.activation)
    if gp is not None:
        g = g + gp
    return vals, g


def ascend(params: NetworkParams, centers, starts, objective: Objective, budget: AttackBudget):
    """Run PGD ascent from every row of ``starts``; rows stay in the ball
    around the matching row of ``centers``.  Returns the best iterate of each
    row and its objective value (first maximum wins ties)."""
    centers = np.asarray(centers, dtype=np.float64)
    P = project(centers, starts, budget)
    best_p = P.copy()
    best_v = np.full(P.shape[0], -np.inf)
    steps = budget.steps()
    for it in range(budget.iterations + 1):
        vals, g = _value_and_grad(params, P, objective)
        better = vals > best_v
        best_v[better] = vals[better]
        best_p[better] = P[better]
        if it == budget.iterations:
            break
        if budget.norm == "linf":
            direction = np.sign(g)
        else:
            n = np.linalg.norm(g, axis=1, keepdims=True)
            direction = np.divide(g, n, out=np.zeros_like(g), where=n > 0)
        P = project(centers, P + steps[it] * direction, budget)
    return best_p, best_v


def search(params: NetworkParams, x0, objective: Objective, budget: AttackBudget, init=None):
    """Best point for one origin: ``x0`` itself, ``budget.restarts`` random starts
    (if enabled) and any caller-supplied warm starts in ``init``.  ``x0``
    keeps the win on ties."""
    x0 = np.asarray(x0, dtype=np.float64)
    v0, _ = _value_and_grad(params, x0[None, :], objective)
    best_p, best_v = x0.copy(), float(v0[0])
    if budget.radius == 0.0:
        return best_p, best_v
    rows = [x0[None, :]]
    if budget.random_start:
        rows = [random_starts(x0, budget, np.random.default_rng(budget.seed), budget.restarts)]
    if init is not None:
        rows.append(np.atleast_2d(np.asarray(init, dtype=np.float64)))
    starts = np.vstack(rows)
    pts, vals = ascend(params, np.broadcast_to(x0, starts.shape), starts, objective, budget)
    j = int(np.argmax(vals))
    if vals[j] > best_v:
        best_p, best_v = pts[j].copy(), float(vals[j])
    return best_p, best_v


# -- objectives -------------------------------------------------------------

def loss_objective(kind: LossKind, y) -> Objective:
    def obj(Z, P):
        v, g = losses.value_and_dlogits(kind, Z, y)
        return v, g, None
    return obj


def log_prob_objective(label) -> Objective:
    """``log F(z)_label``; ascent on this is PGD on ``-log F(.)_label`` descent."""
    def obj(Z, P):
        n = Z.shape[0]
        lab = np.broadcast_to(np.asarray(label, dtype=np.intp), (n,))
        logp = log_softmax(Z)
        g = -np.exp(logp)
        g[np.arange(n), lab] += 1.0
        return logp[np.arange(n), lab], g, None
    return obj


def _result(params, point, target, objective_value, y=None) -> AttackResult:
    label, p = predict(params, point)
    if target is not None:
        success = label == target
    else:
        success = y is not None and label != y
    return AttackResult(point, target, float(np.max(p)), int(label), bool(success), float(objective_value))


# -- public attacks -----------------------------------------------------------

def pgd_maximize_loss(params: NetworkParams, x0, y: int, kind: LossKind = CROSS_ENTROPY,
                      budget: AttackBudget = AttackBudget(), init=None) -> AttackResult:
    """Inner maximisation of the min-max objective for one sample."""
    point, val = search(params, x0, loss_objective(kind, y), budget, init)
    return _result(params, point, None, val, y=y)


def pgd_maximize_loss_batch(params: NetworkParams, X0, Y, kind: LossKind, budget: AttackBudget,
                            rng: np.random.Generator) -> np.ndarray:
    """Batched inner maximisation used during training (one row per restart).

    Returns the best point per sample; the clean point wins if nothing beats it.
    """
    X0 = np.asarray(X0, dtype=np.float64)
    if budget.radius == 0.0:
        return X0
    n, d = X0.shape
    R = budget.restarts
    centers = np.repeat(X0, R, axis=0)
    ys = np.repeat(np.asarray(Y), R)
    if budget.random_start:
        starts = random_starts(centers, budget, rng, n * R)
    else:
        starts = centers.copy()
    obj = loss_objective(kind, ys)
    pts, vals = ascend(params, centers, starts, obj, budget)
    v0, _ = _value_and_grad(params, X0, loss_objective(kind, Y))
    vals = vals.reshape(n, R)
    j = np.argmax(vals, axis=1)
    best = pts.reshape(n, R, d)[np.arange(n), j]
    keep = vals[np.arange(n), j] > v0
    return np.where(keep[:, None], best, X0)


def targeted_confidence_attack(params: NetworkParams, x0, target: int,
                               budget: AttackBudget = AttackBudget(), init=None) -> AttackResult:
    """Maximise ``F(.)_target`` in the ball; success iff the prediction becomes ``target``."""
    point, val = search(params, x0, log_prob_objective(target), budget, init)
    return _result(params, point, int(target), val)


def best_wrong_attack(params: NetworkParams, x0, y: int,
                      budget: AttackBudget = AttackBudget()) -> Optional[AttackResult]:
    """Most confident successful targeted attack over all wrong labels, or None."""
    best = None
    for t in range(params.n_classes):
        if t == y:
            continue
        res = targeted_confidence_attack(params, x0, t, replace(budget, seed=derive_seed(budget.seed, t)))
        if res.success and (best is None or res.achieved_confidence > best.achieved_confidence):
            best = res
    return best


def p_confident_attack(params: NetworkParams, x0, y: int, p: float,
                       budget: AttackBudget = AttackBudget()) -> Optional[AttackResult]:
    """A point in the ball that is ``p``-confident for some wrong label, if found.

    Search is one-sided: ``None`` means the attack failed, not that no such
    point exists.
    """
    res = best_wrong_attack(params, x0, y, budget)
    if res is None or res.achieved_confidence < p:
        return None
    return res


def kappa_hat(params: NetworkParams, x0, y: int, kind: LossKind = CROSS_ENTROPY,
              budget: AttackBudget = AttackBudget(), init=None) -> float:
    """Lower estimate of the worst-case loss over the ball."""
    return pgd_maximize_loss(params, x0, y, kind, budget, init).objective


def distance(x0, z, norm: str) -> float:
    d = np.asarray(z, dtype=np.float64) - np.asarray(x0, dtype=np.float64)
    return float(np.max(np.abs(d))) if norm == "linf" else float(np.linalg.norm(d))


__all__ = [
    "AttackBudget", "AttackResult", "project", "in_budget", "random_starts", "ascend", "search",
    "pgd_maximize_loss", "pgd_maximize_loss_batch", "targeted_confidence_attack", "best_wrong_attack",
    "p_confident_attack", "kappa_hat", "derive_seed", "for_sample", "distance",
]
