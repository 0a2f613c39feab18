"""Confidence-driven embedding defenses.

``hcnn`` searches a xi-ball for a point that is both confident and close to
the query; ``mcn`` drops the distance penalty; ``ncn`` finds the smallest
radius (on a fixed schedule) at which a confident neighbour exists.  All of
them are assembled from :func:`per_label_embed`, one PGD solve per label.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import attacks
from .attacks import AttackBudget
from .nn_core import DEFAULT_BOX, NetworkParams, confidence, log_softmax, predict, probs
from .separation import SeparationSpec, certify_separation_sample, lattice_offsets

log = logging.getLogger(__name__)

MODES = ("max_prob", "shannon", "renyi")
NCN_STAGES = 8


class _Bottom:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "BOTTOM"

    def __reduce__(self):
        return (_Bottom, ())


BOTTOM = _Bottom()


@dataclass(frozen=True)
class EmbedConfig:
    """Embedding search settings.  The solver budget is derived: its radius is
    always ``xi``.  Defaults: linf search, l2 distance penalty, 100
    iterations from the query itself (no random start)."""

    xi: float = 0.05
    lam: float = 0.0
    search_norm: str = "linf"
    dist_norm: str = "l2"
    iterations: int = 100
    restarts: int = 1
    random_start: bool = False
    mode: str = "max_prob"
    alpha: float = 2.0  # renyi order
    seed: int = 0
    box: tuple = DEFAULT_BOX

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.search_norm not in attacks.NORMS or self.dist_norm not in attacks.NORMS:
            raise ValueError("norms must be linf or l2")
        if self.mode not in MODES:
            raise ValueError(f"unknown objective mode {self.mode!r}")
        if self.mode == "renyi":
            _check_alpha(self.alpha)

    @property
    def solver_budget(self) -> AttackBudget:
        return AttackBudget(norm=self.search_norm, radius=self.xi, iterations=self.iterations,
                            restarts=self.restarts, random_start=self.random_start, seed=self.seed,
                            box=self.box)


@dataclass(frozen=True)
class EmbedResult:
    point: np.ndarray
    per_label_points: tuple  # ((point, objective), ...) indexed by label
    chosen_label: int

    @property
    def objective(self) -> float:
        return self.per_label_points[self.chosen_label][1]


@dataclass(frozen=True)
class RejectionConfig:
    p0: float

    def __post_init__(self):
        if not 0.0 < self.p0 < 1.0:
            raise ValueError("p0 must lie in (0, 1)")


@dataclass(frozen=True)
class ParameterBudgetTriple:
    delta: float
    eta: float
    xi: float

    @property
    def satisfied(self) -> bool:
        return self.delta >= self.eta + self.xi

    def check(self) -> bool:
        """Warn (not fail) when ``delta < eta + xi``; the guarantee then lapses."""
        if not self.satisfied:
            warnings.warn(f"delta={self.delta} < eta + xi = {self.eta + self.xi}: "
                          "confidence guarantee does not cover the search region", stacklevel=2)
        return self.satisfied


# -- entropy surrogates -------------------------------------------------------

def _check_alpha(alpha):
    if alpha < 0 or alpha == 1:
        raise ValueError(f"renyi order must be >= 0 and != 1, got {alpha}")


def entropy(p, mode: str = "shannon", alpha: float = 2.0) -> float:
    """Shannon or Renyi entropy of a probability vector (natural log)."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    if mode == "shannon":
        return float(max(0.0, -np.sum(nz * np.log(nz))))
    if mode == "renyi":
        _check_alpha(alpha)
        if alpha == 0:
            return math.log(nz.size)
        a = alpha * np.log(nz)
        m = a.max()
        return float(max(0.0, (m + math.log(np.sum(np.exp(a - m)))) / (1.0 - alpha)))
    raise ValueError(f"unknown entropy mode {mode!r}")


def _entropy_and_dlogits(Z, mode, alpha):
    logp = log_softmax(Z)
    p = np.exp(logp)
    if mode == "shannon":
        h = -np.sum(p * logp, axis=1)
        return h, -p * (logp + h[:, None])
    if alpha == 0:
        return np.full(Z.shape[0], math.log(Z.shape[1])), np.zeros_like(Z)
    a = alpha * logp
    m = a.max(axis=1, keepdims=True)
    lse = (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]
    q = np.exp(a - lse[:, None])  # p^alpha / sum p^alpha
    return lse / (1.0 - alpha), alpha / (1.0 - alpha) * (q - p)


# -- objectives ---------------------------------------------------------------

def _distance_term(P, x, norm):
    d = P - x
    if norm == "l2":
        n = np.linalg.norm(d, axis=1)
        g = np.divide(d, n[:, None], out=np.zeros_like(d), where=n[:, None] > 0)
        return n, g
    a = np.abs(d)
    j = np.argmax(a, axis=1)
    rows = np.arange(len(d))
    g = np.zeros_like(d)
    g[rows, j] = np.sign(d[rows, j])
    return a[rows, j], g


def _label_objective(x, label, cfg: EmbedConfig):
    """Ascent objective ``F(z)_label - lam * |z - x|``.

    For ``lam == 0`` the log-probability is ascended instead: same maximiser,
    no vanishing gradients at low probability.
    """
    if cfg.lam == 0:
        return attacks.log_prob_objective(label)

    def obj(Z, P):
        p = np.exp(log_softmax(Z))
        pl = p[:, label]
        g = -pl[:, None] * p
        g[:, label] += pl
        dist, dg = _distance_term(P, x, cfg.dist_norm)
        return pl - cfg.lam * dist, g, -cfg.lam * dg
    return obj


def _entropy_objective(x, cfg: EmbedConfig):
    def obj(Z, P):
        h, dh = _entropy_and_dlogits(Z, cfg.mode, cfg.alpha)
        if cfg.lam == 0:
            return -h, -dh, None
        dist, dg = _distance_term(P, x, cfg.dist_norm)
        return -h - cfg.lam * dist, -dh, -cfg.lam * dg
    return obj


def label_score(params: NetworkParams, x, z, label: int, cfg: EmbedConfig) -> float:
    """``F(z)_label - lam * |z - x|``, the quantity compared across labels."""
    pen = 0.0 if cfg.lam == 0 else cfg.lam * attacks.distance(x, z, cfg.dist_norm)
    return float(probs(params, z)[label]) - pen


# -- embeddings ---------------------------------------------------------------

def per_label_embed(params: NetworkParams, x, label: int, cfg: EmbedConfig):
    """Maximise ``F(z)_label - lam |z - x|`` over the xi-ball around ``x``.

    Returns ``(z, objective)``; ``x`` is always a candidate.
    """
    x = np.asarray(x, dtype=np.float64)
    budget = attacks.for_sample(cfg.solver_budget, label) if cfg.random_start else cfg.solver_budget
    z, _ = attacks.search(params, x, _label_objective(x, label, cfg), budget)
    return z, label_score(params, x, z, label, cfg)


def hcnn(params: NetworkParams, x, cfg: EmbedConfig) -> EmbedResult:
    """Per-label solves, then the label whose point scores highest (lowest
    index on ties).

    In the entropy modes a single entropy-descent search replaces the
    per-label solves; every label is then scored at that one point.
    """
    x = np.asarray(x, dtype=np.float64)
    if cfg.mode == "max_prob":
        per = tuple(per_label_embed(params, x, l, cfg) for l in range(params.n_classes))
    else:
        z, _ = attacks.search(params, x, _entropy_objective(x, cfg), cfg.solver_budget)
        per = tuple((z, label_score(params, x, z, l, cfg)) for l in range(params.n_classes))
    chosen = int(np.argmax([v for _, v in per]))
    return EmbedResult(per[chosen][0], per, chosen)


def mcn(params: NetworkParams, x, cfg: EmbedConfig) -> EmbedResult:
    return hcnn(params, x, replace(cfg, lam=0.0))


def ncn(params: NetworkParams, x, p: float, max_radius: float, cfg: EmbedConfig,
        stages: int = NCN_STAGES) -> Optional[np.ndarray]:
    """Nearest ``p``-confident neighbour on the radius schedule
    ``max_radius * k / stages``; ``x`` itself if already confident."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    x = np.asarray(x, dtype=np.float64)
    if confidence(probs(params, x)) >= p:
        return x.copy()
    for k in range(1, stages + 1):
        res = mcn(params, x, replace(cfg, xi=max_radius * k / stages))
        if confidence(probs(params, res.point)) >= p:
            return res.point
    return None


def embed(params: NetworkParams, x, cfg: EmbedConfig, variant: str = "mcn") -> EmbedResult:
    if variant == "mcn":
        return mcn(params, x, cfg)
    if variant == "hcnn":
        return hcnn(params, x, cfg)
    raise ValueError(f"unknown embedding variant {variant!r}")


def gamma(params: NetworkParams, x, cfg: EmbedConfig, variant: str = "mcn"):
    """End-to-end defended prediction: the base model at the embedded point."""
    res = embed(params, x, cfg, variant)
    label, p = predict(params, res.point)
    if label != res.chosen_label:
        log.debug("embedded point predicts %d but was chosen for label %d", label, res.chosen_label)
    return label, p


def reject(params: NetworkParams, x, cfg: RejectionConfig):
    """Predicted label, or ``BOTTOM`` when confidence is below ``p0``."""
    label, p = predict(params, x)
    return BOTTOM if confidence(p) < cfg.p0 else label


def check_mcn_goodness(params: NetworkParams, x, y: int, p: float, cfg: EmbedConfig) -> bool:
    """True certifies a ``p``-confident point for ``y`` inside the xi-ball;
    False only means the search did not find one."""
    z, _ = per_label_embed(params, x, y, replace(cfg, lam=0.0))
    return bool(probs(params, z)[y] >= p)


# -- exhaustive check of the MCN separation-improvement statement ------------

@dataclass(frozen=True)
class McnSeparationReport:
    good: np.ndarray  # (p, delta)-good points
    hypothesis_holds: np.ndarray  # per good point: all eta-neighbours MCN-good
    violations: np.ndarray  # per point: eta-neighbours where a wrong label gets >= 1 - p
    neighbours_checked: int

    @property
    def hypothesis(self) -> bool:
        return bool(np.all(self.hypothesis_holds[self.good]))

    @property
    def n_violating_points(self) -> int:
        return int(np.sum(self.violations[self.good] > 0))


def check_mcn_separation(params: NetworkParams, points, labels, p: float, delta: float, eta: float,
                         xi: float, pitch: float, box=DEFAULT_BOX) -> McnSeparationReport:
    """Exhaustive linf-lattice evaluation of the MCN defense around each point.

    All balls are taken on the common lattice ``x + pitch * Z^d``, so with
    ``eta + xi <= delta`` every xi-window of an eta-neighbour lies inside the
    delta-ball that certified the point.  For each good point we check the
    hypothesis (every eta-neighbour has a ``p``-confident point for the true
    label within xi) and count eta-neighbours where the exhaustive MCN
    embedding gives a wrong label probability ``>= 1 - p``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.intp)
    ParameterBudgetTriple(delta, eta, xi).check()
    m_eta = int(math.floor(eta / pitch + 1e-9))
    m_xi = int(math.floor(xi / pitch + 1e-9))
    M = m_eta + m_xi
    d = points.shape[1]
    good = certify_separation_sample(params, points, SeparationSpec(p, 0.0, delta, "linf"), pitch,
                                     labels=labels, box=box)
    hyp = np.zeros(len(points), dtype=bool)
    viol = np.zeros(len(points), dtype=np.int64)
    side = 2 * M + 1
    offsets = lattice_offsets(M * pitch, pitch, d)  # row-major over the cube
    checked = 0
    for i, (x, y) in enumerate(zip(points, labels)):
        if not good[i]:
            continue
        pts = x + pitch * offsets
        inside = np.all((pts >= box[0]) & (pts <= box[1]), axis=1)
        pr = probs(params, pts)
        conf = np.where(inside, pr.max(axis=1), -np.inf).reshape((side,) * d)
        py = np.where(inside, pr[:, y], -np.inf).reshape((side,) * d)
        prc = pr.reshape((side,) * d + (pr.shape[1],))
        ok = True
        for kz in lattice_offsets(m_eta * pitch, pitch, d):
            z = x + pitch * kz
            if np.any(z < box[0]) or np.any(z > box[1]):
                continue
            checked += 1
            win = tuple(slice(M + k - m_xi, M + k + m_xi + 1) for k in kz)
            if not np.any(py[win] >= p):
                ok = False
            cw = conf[win]
            j = np.unravel_index(int(np.argmax(cw)), cw.shape)
            best = [w.start + jj for w, jj in zip(win, j)]
            f = prc[tuple(best)]
            if np.any(np.delete(f, y) >= 1.0 - p):
                viol[i] += 1
        hyp[i] = ok
    return McnSeparationReport(good, hyp, viol, checked)
