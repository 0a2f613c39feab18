"""Desk-scale versions of the rejection and MCN top-2 experiments."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .. import attacks
from ..attacks import AttackBudget
from ..defense import EmbedConfig, mcn, per_label_embed
from ..nn_core import NetworkParams, confidence, predict, probs
from ..separation import SeparationEstimate, estimate_bad_event, fill_interval
from ..training import Dataset

ROWS = ("first_confident", "second_confident", "other_points", "missing")
COLS = ("label_change", "confidence_reduction")


def fan_out(fn: Callable, items: Iterable, threads: int = 1) -> list:
    """Map ``fn`` over ``items`` keeping input order; results depend only on the item."""
    items = list(items)
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def correct_indices(params: NetworkParams, data: Dataset) -> np.ndarray:
    labels, _ = predict(params, data.X)
    return np.flatnonzero(labels == data.y)


# -- rejection ----------------------------------------------------------------

@dataclass(frozen=True)
class RejectionReport:
    eta: float
    p0: float
    awpr_original: float
    awpr_with_rejection: float
    recall_natural: float
    n_natural: int
    n_adversarial: int
    rejected_adv: int
    rejected_nat: int
    model: str = "model"

    @property
    def counts(self):
        return (self.n_natural, self.n_adversarial, self.rejected_adv, self.rejected_nat)


@dataclass(frozen=True)
class AttackOutcomes:
    """Per natural point: clean confidence and (if any) the best wrong attack."""

    indices: np.ndarray
    clean_confidence: np.ndarray
    adversarial: tuple  # AttackResult or None per natural point


def collect_adversarial(params: NetworkParams, data: Dataset, eta: float, budget: AttackBudget,
                        threads: int = 1) -> AttackOutcomes:
    nat = correct_indices(params, data)
    if nat.size == 0:
        raise ValueError("model classifies no point correctly; natural set is empty")
    b = budget.with_radius(eta)

    def one(i):
        return attacks.best_wrong_attack(params, data.X[i], int(data.y[i]), attacks.for_sample(b, int(i)))

    adv = fan_out(one, nat, threads)
    conf = np.asarray(confidence(probs(params, data.X[nat])), dtype=np.float64).reshape(-1)
    return AttackOutcomes(nat, conf, tuple(adv))


def rejection_reports(outcomes: AttackOutcomes, eta: float, thresholds: Sequence[float],
                      model: str = "model") -> list:
    n = len(outcomes.indices)
    adv_conf = np.array([r.achieved_confidence for r in outcomes.adversarial if r is not None])
    out = []
    for p0 in thresholds:
        if not 0.0 < p0 < 1.0:
            raise ValueError(f"threshold {p0} outside (0, 1)")
        surviving = int(np.sum(adv_conf >= p0))
        kept = int(np.sum(outcomes.clean_confidence >= p0))
        out.append(RejectionReport(
            eta=float(eta), p0=float(p0),
            awpr_original=adv_conf.size / n,
            awpr_with_rejection=surviving / n,
            recall_natural=kept / n,
            n_natural=n, n_adversarial=int(adv_conf.size),
            rejected_adv=int(adv_conf.size - surviving), rejected_nat=n - kept,
            model=model,
        ))
    return out


def rejection_experiment(params: NetworkParams, data: Dataset, eta: float, thresholds: Sequence[float],
                         budget: AttackBudget, threads: int = 1, model: str = "model") -> list:
    """AWPR before/after confidence rejection and natural recall, per threshold.

    The natural set holds the points the model gets right; each is attacked
    once (most confident successful wrong label) within ``eta``.
    """
    for p0 in thresholds:
        if not 0.0 < p0 < 1.0:
            raise ValueError(f"threshold {p0} outside (0, 1)")
    outcomes = collect_adversarial(params, data, eta, budget, threads)
    return rejection_reports(outcomes, eta, thresholds, model)


def awpr_at_recall(reports: Sequence[RejectionReport], min_recall: float) -> Optional[float]:
    """Lowest AWPR-with-rejection among thresholds keeping recall >= ``min_recall``."""
    ok = [r.awpr_with_rejection for r in reports if r.recall_natural >= min_recall]
    return min(ok) if ok else None


# -- MCN taxonomy -------------------------------------------------------------

def _empty_counts():
    return {r: {c: 0 for c in COLS} for r in ROWS}


@dataclass
class McnTaxonomy:
    eta: float
    xi: float
    n_natural: int
    n_classes: int
    counts: dict = field(default_factory=_empty_counts)
    gamma_correct: dict = field(default_factory=lambda: {c: 0 for c in COLS})
    model: str = "model"

    @property
    def totals(self) -> dict:
        return {c: sum(self.counts[r][c] for r in ROWS) for c in COLS}

    @property
    def attempted(self) -> int:
        return (self.n_classes - 1) * self.n_natural

    def check_partition(self) -> None:
        if sum(self.totals.values()) != self.attempted:
            raise AssertionError(f"taxonomy cells sum to {sum(self.totals.values())}, "
                                 f"expected {self.attempted}")

    def rate(self, row: str, col: str) -> float:
        t = self.totals[col]
        return self.counts[row][col] / t if t else float("nan")

    def gamma_rate(self, col: str) -> float:
        t = self.totals[col]
        return self.gamma_correct[col] / t if t else float("nan")


@dataclass(frozen=True)
class McnOutcome:
    index: int
    target: int
    outcome: str
    rank: str
    gamma_label: int


def classify_embedding(params: NetworkParams, x_adv, y: int, cfg: EmbedConfig):
    """Rank of the true label among the per-label embedded points sorted by
    confidence (stable, lowest label first on ties)."""
    pts = [per_label_embed(params, x_adv, l, cfg)[0] for l in range(params.n_classes)]
    pr = probs(params, np.vstack(pts))
    order = np.argsort(-pr.max(axis=1), kind="stable")
    preds = np.argmax(pr, axis=1)[order]
    if preds[0] == y:
        return "first_confident"
    if len(preds) > 1 and preds[1] == y:
        return "second_confident"
    if np.any(preds == y):
        return "other_points"
    return "missing"


def mcn_experiment(params: NetworkParams, data: Dataset, eta: float, xi: float, cfg: EmbedConfig,
                   budget: AttackBudget, threads: int = 1, model: str = "model"):
    """Attack every natural point towards every wrong label, then tally where
    the true label lands among the MCN-embedded points.

    Returns ``(taxonomy, outcomes)``.  Only correctly classified points count.
    """
    nat = correct_indices(params, data)
    b = budget.with_radius(eta)
    k = params.n_classes
    cfg = replace(cfg, xi=float(xi), lam=0.0)

    def one(i):
        x, y = data.X[i], int(data.y[i])
        rows = []
        for t in range(k):
            if t == y:
                continue
            res = attacks.targeted_confidence_attack(params, x, t, attacks.for_sample(b, int(i) * k + t))
            outcome = "label_change" if res.achieved_label != y else "confidence_reduction"
            rank = classify_embedding(params, res.point, y, cfg)
            g_label, _ = predict(params, mcn(params, res.point, cfg).point)
            rows.append(McnOutcome(int(i), t, outcome, rank, int(g_label)))
        return rows

    outcomes = [o for rows in fan_out(one, nat, threads) for o in rows]
    tax = McnTaxonomy(float(eta), float(xi), int(nat.size), k, model=model)
    for o in outcomes:
        tax.counts[o.rank][o.outcome] += 1
        if o.gamma_label == int(data.y[o.index]):
            tax.gamma_correct[o.outcome] += 1
    tax.check_partition()
    return tax, outcomes


# -- separation ---------------------------------------------------------------

@dataclass(frozen=True)
class SeparationRecord:
    model: str
    p: float
    delta: float
    estimate: SeparationEstimate


def separation_experiment(params: NetworkParams, data: Dataset, p: float, delta: float, epsilon: float,
                          budget: AttackBudget, model: str = "model") -> SeparationRecord:
    est = estimate_bad_event(params, data, p, delta, budget.with_radius(delta))
    return SeparationRecord(model, float(p), float(delta), fill_interval(est, epsilon))
