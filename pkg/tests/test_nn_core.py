import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from confsep import nn_core
from confsep.nn_core import (ModelFormatError, NetworkParams, ShapeError, backward, confidence,
                             forward_logits, init_params, input_grad, load_model, predict, probs,
                             save_model, softmax)
from oracles import central_diff, constant_net, linear_net, ref_probs, rel_err, straight_line_forward

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_zero_network_gives_zero_logits():
    p = NetworkParams([3, 5, 4], [np.zeros((3, 5)), np.zeros((5, 4))], [np.zeros(5), np.zeros(4)])
    assert np.array_equal(forward_logits(p, [0.3, 0.1, 0.9]), np.zeros(4))


def test_identity_layer():
    p = linear_net(np.eye(2), np.zeros(2))
    assert np.array_equal(forward_logits(p, [0.2, 0.8]), [0.2, 0.8])


@pytest.mark.parametrize("activation", ["tanh", "relu"])
@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_hand_rolled_chain(seed, activation):
    p = init_params([2, 4, 3], activation, seed=seed, scale=2.0)
    p = NetworkParams(p.layer_sizes, p.weights, [np.full(4, 0.1), np.full(3, -0.2)], activation)
    x = np.random.default_rng(seed).uniform(0, 1, 2)
    np.testing.assert_allclose(forward_logits(p, x), straight_line_forward(p, x), rtol=1e-13, atol=1e-13)


def test_batch_and_single_agree():
    p = init_params([3, 6, 2], seed=4)
    X = np.random.default_rng(0).uniform(size=(5, 3))
    Z = forward_logits(p, X)
    for i in range(5):
        np.testing.assert_allclose(Z[i], forward_logits(p, X[i]), rtol=1e-14, atol=1e-15)


def test_dimension_mismatch_raises():
    with pytest.raises(ShapeError):
        forward_logits(init_params([3, 2]), [0.1, 0.2])
    with pytest.raises(ShapeError):
        NetworkParams([2, 3], [np.zeros((3, 2))], [np.zeros(3)])


def test_nonfinite_params_rejected():
    with pytest.raises(ValueError):
        NetworkParams([1, 2], [np.array([[np.nan, 0.0]])], [np.zeros(2)])


def test_softmax_examples():
    np.testing.assert_array_equal(softmax([0.0, 0.0]), [0.5, 0.5])
    e = math.e
    np.testing.assert_allclose(softmax([1.0, 0.0]), [e / (e + 1), 1 / (e + 1)], rtol=1e-15)
    assert confidence(softmax([1.0, 0.0])) == pytest.approx(e / (e + 1), rel=1e-15)


@given(arrays(np.float64, st.integers(2, 12), elements=finite), st.floats(-1e3, 1e3))
def test_softmax_sums_to_one_and_shift_invariant(z, c):
    p = softmax(z)
    assert abs(p.sum() - 1.0) <= 1e-9
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(softmax(z + c), p, atol=1e-12)


@given(arrays(np.float64, st.integers(2, 6), elements=st.floats(-30, 30)))
def test_softmax_matches_reference(z):
    np.testing.assert_allclose(softmax(z), ref_probs(z), rtol=1e-12, atol=1e-300)


def test_log_softmax_is_stable_at_large_gaps():
    ls = nn_core.log_softmax([1000.0, 0.0])
    assert np.all(np.isfinite(ls))
    assert ls[1] == pytest.approx(-1000.0)


def test_predict_tie_break_and_argmax():
    assert predict(constant_net([2.0, 2.0, 2.0]), [0.5, 0.5])[0] == 0
    assert predict(constant_net(np.log([0.1, 0.7, 0.2])), [0.1, 0.9])[0] == 1
    p = init_params([2, 5, 4], seed=3, scale=3.0)
    x = np.array([0.3, 0.6])
    assert predict(p, x)[0] == int(np.argmax(forward_logits(p, x)))


@given(st.integers(0, 4), st.integers(2, 5))
def test_predict_ties_always_lowest_index(first, k):
    z = np.zeros(k)
    first = first % k
    z[first:] = 1.0
    assert predict(constant_net(z), [0.0, 0.0])[0] == first


def test_confidence_examples():
    assert confidence(np.full(10, 0.1)) == pytest.approx(0.1)
    assert confidence(np.eye(4)[2]) == 1.0


def test_backward_zero_upstream():
    p = init_params([2, 4, 3], seed=1)
    g = backward(p, [0.2, 0.4], np.zeros(3))
    assert not np.any(g.input_grad) and not np.any(g.flat_params())


def test_backward_linear_case():
    W = np.array([[1.0, -2.0, 0.5], [3.0, 0.0, -1.0]])
    u = np.array([0.3, -0.7, 2.0])
    g = backward(linear_net(W, np.zeros(3)), [0.1, 0.9], u)
    np.testing.assert_allclose(g.input_grad, W @ u)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
@pytest.mark.parametrize("seed", range(6))
def test_backward_matches_finite_differences(seed, activation):
    rng = np.random.default_rng(seed)
    p = init_params([2, 4, 3], activation, seed=seed, scale=1.5)
    p = p.with_flat(p.flat() + rng.normal(0, 0.1, p.flat().size))
    x = rng.uniform(0.1, 0.9, 2)
    u = rng.normal(size=3)
    g = backward(p, x, u)
    gx = central_diff(lambda v: float(u @ forward_logits(p, v)), x)
    gt = central_diff(lambda t: float(u @ forward_logits(p.with_flat(t), x)), p.flat())
    assert rel_err(g.input_grad, gx) <= 1e-4
    assert rel_err(g.flat_params(), gt) <= 1e-4
    np.testing.assert_allclose(input_grad(p, x, u), g.input_grad, rtol=1e-14)


def test_batch_param_grads_are_sums():
    p = init_params([2, 3, 2], seed=2)
    X = np.random.default_rng(1).uniform(size=(4, 2))
    U = np.random.default_rng(2).normal(size=(4, 2))
    total = backward(p, X, U).flat_params()
    parts = sum(backward(p, X[i], U[i]).flat_params() for i in range(4))
    np.testing.assert_allclose(total, parts, rtol=1e-12, atol=1e-14)


def test_forward_is_pure():
    p = init_params([2, 8, 3], seed=9)
    x = np.array([0.25, 0.75])
    assert forward_logits(p, x).tobytes() == forward_logits(p, x).tobytes()


def test_params_are_immutable():
    p = init_params([2, 3, 2], seed=0)
    with pytest.raises(ValueError):
        p.weights[0][0, 0] = 1.0


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_save_load_roundtrip_exact(tmp_path, activation):
    p = init_params([3, 7, 5, 2], activation, seed=11, scale=1.7)
    p = p.with_flat(p.flat() + np.random.default_rng(0).normal(0, 1e-3, p.flat().size))
    save_model(p, tmp_path / "m.model")
    q = load_model(tmp_path / "m.model")
    assert q == p
    assert all(a.tobytes() == b.tobytes() for a, b in zip(p.weights, q.weights))
    assert (tmp_path / "m.model").read_text().startswith("CONFSEP-MODEL v1\n")


def test_load_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.model"
    bad.write_text("not a model\n")
    with pytest.raises(ModelFormatError):
        load_model(bad)
    bad.write_text("CONFSEP-MODEL v1\nlayer_sizes 2 2\nactivation tanh\nweight 0 0x1p+0\nbias 0 0x0p+0 0x0p+0\n")
    with pytest.raises((ModelFormatError, ShapeError)):
        load_model(bad)


def test_probs_valid_simplex_for_extreme_logits():
    p = probs(constant_net([800.0, -800.0, 0.0]), [0.2, 0.2])
    assert abs(p.sum() - 1) < 1e-12 and p[0] == 1.0
