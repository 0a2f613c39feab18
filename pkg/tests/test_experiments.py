import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from confsep.attacks import AttackBudget, AttackResult
from confsep.defense import EmbedConfig
from confsep.harness import experiments
from confsep.harness.experiments import (COLS, ROWS, AttackOutcomes, McnTaxonomy, awpr_at_recall,
                                         collect_adversarial, fan_out, mcn_experiment, rejection_experiment,
                                         rejection_reports, separation_experiment)
from confsep.nn_core import predict, probs
from confsep.training import Dataset
from oracles import asymmetric_boundary_instance, ball_lattice, constant_net, random_net


def small_problem(seed=0, n=24, k=2):
    net = random_net(seed, sizes=(2, 12, k), scale_range=(3.0, 5.0))
    X = np.random.default_rng(seed).uniform(0.1, 0.9, (n, 2))
    return net, Dataset(X, np.argmax(probs(net, X), axis=1), n_classes=k)


def fake_outcomes(clean, adv):
    res = [None if c is None else AttackResult(np.zeros(2), 1, c, 1, True, c) for c in adv]
    return AttackOutcomes(np.arange(len(clean)), np.asarray(clean, dtype=float), tuple(res))


def test_fan_out_preserves_order():
    assert fan_out(lambda v: v * v, range(20), threads=4) == [v * v for v in range(20)]


def test_rejection_counts_by_hand():
    out = fake_outcomes([0.99, 0.97, 0.92, 0.6], [0.995, None, 0.93, 0.7])
    r90, r95 = rejection_reports(out, 0.1, [0.9, 0.95])
    assert r90.awpr_original == 0.75 and r90.awpr_with_rejection == 0.5 and r90.recall_natural == 0.75
    assert r95.awpr_with_rejection == 0.25 and r95.recall_natural == 0.5
    assert r95.counts == (4, 3, 2, 2)


@given(st.lists(st.floats(0.5, 1.0), min_size=1, max_size=30), st.data(),
       st.lists(st.floats(0.01, 0.99), min_size=1, max_size=10))
def test_rejection_rates_monotone_in_threshold(clean, data, thresholds):
    adv = data.draw(st.lists(st.one_of(st.none(), st.floats(0.5, 1.0)), min_size=len(clean), max_size=len(clean)))
    reps = rejection_reports(fake_outcomes(clean, adv), 0.1, sorted(thresholds))
    for a, b in zip(reps, reps[1:]):
        assert b.awpr_with_rejection <= a.awpr_with_rejection
        assert b.recall_natural <= a.recall_natural
    for r in reps:
        assert 0 <= r.awpr_with_rejection <= r.awpr_original <= 1
        assert r.awpr_original == r.n_adversarial / r.n_natural


def test_rejection_experiment_end_to_end():
    net, data = small_problem(1)
    b = AttackBudget(iterations=20, restarts=2, seed=3)
    reps = rejection_experiment(net, data, 0.1, [0.6, 0.9, 0.99], b)
    assert [r.p0 for r in reps] == [0.6, 0.9, 0.99]
    assert reps[0].n_natural == len(data)
    again = rejection_experiment(net, data, 0.1, [0.6, 0.9, 0.99], b, threads=3)
    assert reps == again
    assert awpr_at_recall(reps, 0.0) == reps[-1].awpr_with_rejection
    assert awpr_at_recall(reps, 1.01) is None


def test_rejection_errors():
    net, data = small_problem(2)
    with pytest.raises(ValueError):
        rejection_experiment(net, data, 0.1, [0.9, 1.0], AttackBudget())
    wrong = Dataset(data.X, 1 - data.y)
    with pytest.raises(ValueError, match="empty"):
        rejection_experiment(net, wrong, 0.1, [0.9], AttackBudget())


def test_collect_adversarial_only_records_flips():
    net, data = small_problem(3)
    out = collect_adversarial(net, data, 0.1, AttackBudget(seed=1))
    for i, res in zip(out.indices, out.adversarial):
        if res is not None:
            assert predict(net, res.point)[0] != data.y[i]


def test_taxonomy_partition_check():
    tax = McnTaxonomy(0.1, 0.1, n_natural=3, n_classes=3)
    tax.counts["first_confident"]["label_change"] = 6
    tax.check_partition()
    tax.counts["missing"]["confidence_reduction"] = 1
    with pytest.raises(AssertionError):
        tax.check_partition()
    assert np.isnan(McnTaxonomy(0.1, 0.1, 0, 2).rate("missing", "label_change"))


@pytest.mark.parametrize("k", [2, 3])
def test_mcn_experiment_partition_and_determinism(k):
    net, data = small_problem(4, n=12, k=k)
    b = AttackBudget(iterations=20, seed=2)
    cfg = EmbedConfig(iterations=30)
    tax, outs = mcn_experiment(net, data, 0.1, 0.05, cfg, b)
    assert len(outs) == (k - 1) * len(data)
    assert sum(tax.totals.values()) == tax.attempted
    for c in COLS:
        assert sum(tax.counts[r][c] for r in ROWS) == tax.totals[c]
    tax2, outs2 = mcn_experiment(net, data, 0.1, 0.05, cfg, b, threads=2)
    assert tax2.counts == tax.counts and outs2 == outs


def test_mcn_zero_radius_reduces_to_base_outcomes():
    net, data = small_problem(5, n=14, k=3)
    tax, outs = mcn_experiment(net, data, 0.15, 0.0, EmbedConfig(), AttackBudget(seed=1))
    for o in outs:
        assert o.rank == ("first_confident" if o.outcome == "confidence_reduction" else "missing")
        assert (o.gamma_label == data.y[o.index]) == (o.outcome == "confidence_reduction")


def grid_outcome(params, x, y, eta, xi, n=21):
    t = 1 - y
    pts = ball_lattice(x, eta, n)
    x_adv = pts[int(np.argmax(probs(params, pts)[:, t]))]
    outcome = "label_change" if predict(params, x_adv)[0] != y else "confidence_reduction"
    win = ball_lattice(x_adv, xi, n)
    pr = probs(params, win)
    per_label = [win[int(np.argmax(pr[:, l]))] for l in (0, 1)]
    pp = probs(params, np.vstack(per_label))
    order = np.argsort(-pp.max(axis=1), kind="stable")
    preds = np.argmax(pp, axis=1)[order]
    rank = "first_confident" if preds[0] == y else "second_confident" if preds[1] == y else "missing"
    return outcome, rank


@pytest.mark.parametrize("seed", range(3))
def test_mcn_taxonomy_matches_grid_ground_truth(seed):
    # piecewise-linear monotone logit gap: both optimisers land on ball corners
    params, X, y, _ = asymmetric_boundary_instance(seed, n0=10, n1=6)
    data = Dataset(X, y, n_classes=2)
    eta = xi = 0.05
    tax, outs = mcn_experiment(params, data, eta, xi, EmbedConfig(), AttackBudget(seed=seed))
    truth = McnTaxonomy(eta, xi, len(data), 2)
    for i in experiments.correct_indices(params, data):
        o, r = grid_outcome(params, data.X[i], int(data.y[i]), eta, xi)
        truth.counts[r][o] += 1
    assert tax.counts == truth.counts


def test_separation_experiment_fills_interval():
    net = constant_net([0.0, 0.0, 0.0])
    data = Dataset(np.random.default_rng(0).uniform(size=(8, 2)), np.arange(8) % 3)
    rec = separation_experiment(net, data, 0.9, 0.1, 0.2, AttackBudget())
    assert rec.estimate.successes == 0 and rec.estimate.upper == pytest.approx(0.2)
