import numpy as np
import pytest

from confsep import attacks
from confsep.attacks import AttackBudget
from confsep.harness.data import make_synthetic
from confsep.losses import CROSS_ENTROPY, SQUARED, loss
from confsep.nn_core import init_params
from confsep.training import (Dataset, DivergenceError, TrainConfig, accuracy, adversarial_inner_budget,
                              rho_hat, train)
from oracles import constant_net, random_net


def two_blobs(n=80, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = np.where(y[:, None] == 0, [0.25, 0.3], [0.75, 0.7]) + rng.normal(0, 0.04, (n, 2))
    return Dataset(np.clip(X, 0, 1), y)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), [0, 1])
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, 3], n_classes=2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, -1])
    d = Dataset(np.zeros((4, 3)), [0, 1, 1, 0])
    assert d.n_classes == 2 and d.dim == 3 and len(d.subset([1, 2])) == 2


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        train(two_blobs(), [3, 4, 2], TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(two_blobs(), [2, 4, 1], TrainConfig(epochs=1))


def test_separable_blobs_reach_full_accuracy():
    data = two_blobs()
    params = train(data, [2, 8, 2], TrainConfig(epochs=60, learning_rate=0.5, seed=3))
    assert accuracy(params, data) >= 0.99


def test_radius_zero_matches_natural_bit_for_bit():
    data = two_blobs(40)
    base = TrainConfig(epochs=5, seed=7)
    a = train(data, [2, 6, 2], base)
    b = train(data, [2, 6, 2], TrainConfig(epochs=5, seed=7, inner_budget=AttackBudget(radius=0.0)))
    assert a.flat().tobytes() == b.flat().tobytes()


def test_training_is_reproducible():
    data = two_blobs(40)
    cfg = TrainConfig(epochs=4, seed=2, inner_budget=adversarial_inner_budget(0.05, seed=2))
    assert train(data, [2, 6, 2], cfg).flat().tobytes() == train(data, [2, 6, 2], cfg).flat().tobytes()
    other = train(data, [2, 6, 2], TrainConfig(epochs=4, seed=3, inner_budget=cfg.inner_budget))
    assert other.flat().tobytes() != train(data, [2, 6, 2], cfg).flat().tobytes()


def test_epoch_log_fields():
    rows = []
    train(two_blobs(20), [2, 4, 2], TrainConfig(epochs=3), on_epoch=rows.append)
    assert [r["epoch"] for r in rows] == [0, 1, 2]
    assert set(rows[0]) == {"epoch", "clean_loss", "adv_loss", "clean_acc"}


def test_divergence_aborts():
    # tanh saturates instead of overflowing, so force it with relu
    cfg = TrainConfig(epochs=5, learning_rate=1e200, activation="relu", init_scale=5.0)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError, match="non-finite"):
        train(two_blobs(20), [2, 16, 2], cfg)


def test_adversarial_training_lowers_robust_risk():
    # offset 0 gives a noise-free class gap of 0.3, wider than twice the radius
    data = make_synthetic("two_moons", 200, 0.0, seed=5, offset=0.0)
    cfg = dict(epochs=300, learning_rate=0.5, seed=1)
    nat = train(data, [2, 16, 16, 2], TrainConfig(**cfg))
    adv = train(data, [2, 16, 16, 2], TrainConfig(**cfg, inner_budget=adversarial_inner_budget(0.1)))
    b = AttackBudget(radius=0.1, iterations=20, restarts=2, seed=9)
    assert rho_hat(adv, data, CROSS_ENTROPY, b) < rho_hat(nat, data, CROSS_ENTROPY, b)


def test_rho_hat_radius_zero_is_clean_loss():
    net = random_net(4, sizes=(2, 6, 3))
    data = Dataset(np.random.default_rng(0).uniform(size=(15, 2)), np.arange(15) % 3)
    clean = np.mean([loss(SQUARED, net, x, int(y)) for x, y in zip(data.X, data.y)])
    assert rho_hat(net, data, SQUARED, AttackBudget(radius=0.0)) == pytest.approx(clean, rel=1e-12)


def test_rho_hat_zero_for_perfect_constant_model():
    net = constant_net([800.0, 0.0])
    data = Dataset(np.random.default_rng(1).uniform(size=(6, 2)), np.zeros(6, dtype=int), n_classes=2)
    assert rho_hat(net, data, CROSS_ENTROPY, AttackBudget(radius=0.2)) == 0.0


def test_rho_hat_recomposes_from_per_sample_estimates():
    net = random_net(8, sizes=(2, 8, 2))
    data = Dataset(np.random.default_rng(3).uniform(size=(12, 2)), np.arange(12) % 2)
    b = AttackBudget(radius=0.1, iterations=20, seed=4)
    rho, per = rho_hat(net, data, CROSS_ENTROPY, b, return_per_sample=True)
    again = [attacks.kappa_hat(net, data.X[i], int(data.y[i]), CROSS_ENTROPY, attacks.for_sample(b, i))
             for i in range(len(data))]
    assert per.tolist() == again
    assert rho == pytest.approx(sum(again) / len(again), rel=1e-15)
    clean = np.mean([loss(CROSS_ENTROPY, net, x, int(y)) for x, y in zip(data.X, data.y)])
    assert rho >= clean


@pytest.mark.parametrize("seed", range(4))
def test_empirical_markov_over_threshold_grid(seed):
    net = random_net(seed, sizes=(2, 12, 3), scale_range=(2.0, 4.0))
    rng = np.random.default_rng(seed)
    data = Dataset(rng.uniform(size=(30, 2)), rng.integers(0, 3, 30), n_classes=3)
    rho, kappas = rho_hat(net, data, CROSS_ENTROPY, AttackBudget(radius=0.1, iterations=15, seed=seed),
                          return_per_sample=True)
    for t in np.geomspace(1e-3, 20, 60):
        assert np.mean(kappas >= t) <= rho / t


def test_init_params_deterministic():
    a, b = init_params([2, 5, 2], seed=1), init_params([2, 5, 2], seed=1)
    assert a == b
