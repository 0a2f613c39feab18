"""Natural and min-max adversarial training with plain minibatch SGD."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import attacks, losses
from .attacks import AttackBudget
from .losses import CROSS_ENTROPY, LossKind
from .nn_core import NetworkParams, backward, forward_logits, init_params

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    name: str = "data"
    n_classes: Optional[int] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y, dtype=np.intp)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("dataset needs a nonempty (n, d) feature matrix")
        if y.shape != (X.shape[0],):
            raise ValueError("one label per point required")
        if np.any(y < 0):
            raise ValueError("labels must be nonnegative")
        k = int(y.max()) + 1 if self.n_classes is None else int(self.n_classes)
        if np.any(y >= k):
            raise ValueError(f"labels exceed n_classes={k}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n_classes", k)

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx], self.name, self.n_classes)


@dataclass(frozen=True)
class TrainConfig:
    loss: LossKind = CROSS_ENTROPY
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.1
    inner_budget: Optional[AttackBudget] = None  # None -> natural training
    seed: int = 0
    activation: str = "tanh"
    init_scale: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


def adversarial_inner_budget(radius: float, norm: str = "linf", iterations: int = 10,
                             restarts: int = 1, seed: int = 0) -> AttackBudget:
    """Training-time inner maximiser: 10 iterations, 1 random start by default."""
    return AttackBudget(norm=norm, radius=radius, iterations=iterations, restarts=restarts, seed=seed)


def train(data: Dataset, arch: Sequence[int], cfg: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None) -> NetworkParams:
    """Minimise the (adversarial) empirical risk; returns the trained parameters.

    With ``cfg.inner_budget`` set, each minibatch example is replaced by the
    output of the inner PGD maximiser before the gradient step.
    ``on_epoch`` receives ``{epoch, clean_loss, adv_loss, clean_acc}``.
    """
    arch = [int(a) for a in arch]
    if arch[0] != data.dim:
        raise ValueError(f"architecture input size {arch[0]} != data dimension {data.dim}")
    if arch[-1] < data.n_classes:
        raise ValueError(f"architecture has {arch[-1]} outputs for {data.n_classes} classes")
    params = init_params(arch, cfg.activation, seed=cfg.seed, scale=cfg.init_scale)
    shuffle_rng = np.random.default_rng(attacks.derive_seed(cfg.seed, 0))
    attack_rng = np.random.default_rng(attacks.derive_seed(cfg.seed, 1))
    inner = cfg.inner_budget
    n = len(data)
    theta = params.flat()
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        adv_total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            Xb, yb = data.X[idx], data.y[idx]
            if inner is not None and inner.radius > 0:
                Xb = attacks.pgd_maximize_loss_batch(params, Xb, yb, cfg.loss, inner, attack_rng)
            vals, g = losses.value_and_dlogits(cfg.loss, forward_logits(params, Xb), yb)
            if not np.all(np.isfinite(vals)):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            adv_total += float(vals.sum())
            grads = backward(params, Xb, g / len(idx))
            theta = theta - cfg.learning_rate * grads.flat_params()
            if not np.all(np.isfinite(theta)):
                raise DivergenceError(f"non-finite parameters at epoch {epoch}")
            params = params.with_flat(theta)
        if on_epoch is not None:
            z = forward_logits(params, data.X)
            clean, _ = losses.value_and_dlogits(cfg.loss, z, data.y)
            on_epoch({
                "epoch": epoch,
                "clean_loss": float(clean.mean()),
                "adv_loss": adv_total / n,
                "clean_acc": float(np.mean(np.argmax(z, axis=1) == data.y)),
            })
    return params


def accuracy(params: NetworkParams, data: Dataset) -> float:
    return float(np.mean(np.argmax(forward_logits(params, data.X), axis=1) == data.y))


def rho_hat(params: NetworkParams, data: Dataset, kind: LossKind = CROSS_ENTROPY,
            budget: AttackBudget = AttackBudget(), return_per_sample: bool = False):
    """Mean of the per-sample worst-case loss estimates over ``data``.

    Sample ``i`` is attacked with a seed derived from ``(budget.seed, i)``.
    """
    kappas = np.array([
        attacks.kappa_hat(params, data.X[i], int(data.y[i]), kind,
                          attacks.for_sample(budget, i))
        for i in range(len(data))
    ])
    rho = float(kappas.mean())
    return (rho, kappas) if return_per_sample else rho
