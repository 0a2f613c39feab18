"""Losses that decrease monotonically in the true-class probability, and their
loss-lower-bound functions ``tau``.

``tau(kind, q)`` is a guaranteed floor: whenever ``F(x)_y <= q`` the loss is at
least ``tau(kind, q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn_core import GradientBundle, NetworkParams, _as_rows, backward, forward_logits, log_softmax

PROB_FLOOR = 1e-300
KINDS = ("cross_entropy", "squared", "entropy_regularized", "cw_margin")


@dataclass(frozen=True)
class LossKind:
    kind: str = "cross_entropy"
    weight: float = 0.0  # entropy_regularized only
    kappa: float = 0.0  # cw_margin only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.weight < 0 or self.kappa < 0:
            raise ValueError("loss weight and kappa must be nonnegative")

    @classmethod
    def parse(cls, text: str) -> "LossKind":
        """Parse ``cross_entropy | squared | entreg:<weight> | cw:<kappa>``."""
        text = text.strip()
        if text in ("cross_entropy", "squared"):
            return cls(text)
        head, _, arg = text.partition(":")
        try:
            if head == "entreg":
                return cls("entropy_regularized", weight=float(arg))
            if head == "cw":
                return cls("cw_margin", kappa=float(arg))
        except ValueError:
            pass
        raise ValueError(f"cannot parse loss {text!r}")

    def __str__(self):
        if self.kind == "entropy_regularized":
            return f"entreg:{self.weight!r}"
        if self.kind == "cw_margin":
            return f"cw:{self.kappa!r}"
        return self.kind


CROSS_ENTROPY = LossKind("cross_entropy")
SQUARED = LossKind("squared")


def _as_kind(kind) -> LossKind:
    return kind if isinstance(kind, LossKind) else LossKind.parse(str(kind))


def value_and_dlogits(kind: LossKind, Z: np.ndarray, y):
    """Per-row loss and its gradient w.r.t. the logits, for a batch ``Z``."""
    kind = _as_kind(kind)
    n, k = Z.shape
    y = np.broadcast_to(np.asarray(y, dtype=np.intp), (n,))
    rows = np.arange(n)
    logp = log_softmax(Z)
    p = np.exp(logp)
    onehot = np.zeros_like(Z)
    onehot[rows, y] = 1.0
    if kind.kind == "cross_entropy":
        return -logp[rows, y], p - onehot
    if kind.kind == "squared":
        py = p[rows, y]
        # d p_y / dz = p_y (e_y - p)
        return (1.0 - py) ** 2, (-2.0 * (1.0 - py) * py)[:, None] * (onehot - p)
    if kind.kind == "entropy_regularized":
        ent = -np.sum(p * logp, axis=1)
        dent = -p * (logp + ent[:, None])
        return -logp[rows, y] + kind.weight * ent, p - onehot + kind.weight * dent
    # cw_margin
    masked = np.where(onehot > 0, -np.inf, Z)
    j = np.argmax(masked, axis=1)
    margin = Z[rows, j] - Z[rows, y]
    active = margin > -kind.kappa
    g = np.zeros_like(Z)
    g[rows, j] = 1.0
    g[rows, y] -= 1.0
    g[~active] = 0.0
    return np.maximum(margin, -kind.kappa), g


def loss(kind, params: NetworkParams, x, y):
    """Loss of the network at ``x`` (vector or row batch) for label(s) ``y``."""
    X, single = _as_rows(params, x)
    vals, _ = value_and_dlogits(_as_kind(kind), forward_logits(params, X), y)
    return float(vals[0]) if single else vals


def loss_grad(kind, params: NetworkParams, x, y) -> GradientBundle:
    """Gradient of the (summed, for batches) loss w.r.t. input and parameters."""
    X, single = _as_rows(params, x)
    _, g = value_and_dlogits(_as_kind(kind), forward_logits(params, X), y)
    bundle = backward(params, X, g)
    if single:
        return GradientBundle(bundle.input_grad[0], bundle.weight_grads, bundle.bias_grads)
    return bundle


def loss_from_probs(kind, p, y) -> float:
    """Loss evaluated on a prediction vector directly (no logits needed).

    The true-class probability is floored at ``PROB_FLOOR`` before ``log``.
    """
    kind = _as_kind(kind)
    p = np.asarray(p, dtype=np.float64)
    py = float(p[y])
    if kind.kind == "cross_entropy":
        return -math.log(max(py, PROB_FLOOR))
    if kind.kind == "squared":
        return (1.0 - py) ** 2
    if kind.kind == "entropy_regularized":
        nz = p[p > 0]
        return -math.log(max(py, PROB_FLOOR)) + kind.weight * float(-np.sum(nz * np.log(nz)))
    raise ValueError("cw_margin is defined on logits, not probabilities")


def has_useful_tau(kind) -> bool:
    """False for cw_margin: its lower bound in terms of F(x)_y is not available,
    so ``tau`` returns 0 and bounds built on it are vacuous."""
    return _as_kind(kind).kind != "cw_margin"


def tau(kind, q: float) -> float:
    kind = _as_kind(kind)
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if kind.kind in ("cross_entropy", "entropy_regularized"):
        # entropy term is >= 0, so the cross-entropy floor still holds
        return math.inf if q == 0.0 else max(0.0, -math.log(q))
    if kind.kind == "squared":
        return (1.0 - q) ** 2
    return 0.0
