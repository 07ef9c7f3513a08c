import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedsel import _kernels
from fedsel.core import derive_stream
from fedsel.data import generate_synthetic
from fedsel.model import (ModelParams, ModelSpec, ShapeMismatch, epoch_orders, evaluate,
                          init_params, load_params, local_train, loss_and_gradient,
                          params_from_bytes, params_to_bytes, save_params, zeros)

BACKENDS = ["numpy"] + (["numba"] if _kernels.HAS_NUMBA else [])


def central_diff(params, x, y, h=1e-5):
    """Independent oracle: central finite differences on the loss."""
    grad = np.empty(params.spec.n_params)
    for j in range(len(grad)):
        up = params.values.copy()
        down = params.values.copy()
        up[j] += h
        down[j] -= h
        grad[j] = (loss_and_gradient(ModelParams(up, params.spec), x, y)[0]
                   - loss_and_gradient(ModelParams(down, params.spec), x, y)[0]) / (2 * h)
    return grad


def random_instance(seed, hidden=0):
    r = np.random.default_rng(seed)
    f, c = int(r.integers(1, 5)), int(r.integers(2, 5))
    spec = ModelSpec(f, c, hidden)
    params = ModelParams(r.normal(scale=0.5, size=spec.n_params), spec)
    n = int(r.integers(1, 8))
    return params, r.normal(size=(n, f)), r.integers(0, c, n)


def test_param_counts():
    assert init_params(ModelSpec(20, 10), derive_stream(0, "i")).values.shape == (210,)
    assert init_params(ModelSpec(20, 10, 32), derive_stream(0, "i")).values.shape == (20 * 32 + 32 + 32 * 10 + 10,)


def test_init_deterministic_and_bounded():
    spec = ModelSpec(20, 10, 32)
    a = init_params(spec, derive_stream(3, "init"))
    b = init_params(spec, derive_stream(3, "init"))
    assert np.array_equal(a.values, b.values)
    w1, b1, w2, b2 = a.unpack()
    assert np.abs(w1).max() <= math.sqrt(6 / 52) and np.abs(w2).max() <= math.sqrt(6 / 42)
    assert not b1.any() and not b2.any()


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(3, 1)
    with pytest.raises(ShapeMismatch):
        ModelParams(np.zeros(5), ModelSpec(2, 2))


@pytest.mark.parametrize("c", [2, 5, 10])
def test_zero_params_loss_is_log_c(c):
    x = np.random.default_rng(0).normal(size=(2 * c, 4))
    y = np.arange(2 * c) % c
    loss, _ = loss_and_gradient(zeros(ModelSpec(4, c)), x, y)
    assert loss == pytest.approx(math.log(c), abs=1e-12)


@pytest.mark.parametrize("hidden", [0, 3])
def test_gradient_matches_finite_differences(hidden):
    for seed in range(25):
        params, x, y = random_instance(seed, hidden)
        _, grad = loss_and_gradient(params, x, y)
        fd = central_diff(params, x, y)
        err = np.abs(grad - fd) / np.maximum(1.0, np.abs(fd))
        assert err.max() < 1e-4


@pytest.mark.parametrize("hidden", [0, 4])
def test_duplicated_batch_same_loss_and_gradient(hidden):
    params, x, y = random_instance(11, hidden)
    l1, g1 = loss_and_gradient(params, x, y)
    l2, g2 = loss_and_gradient(params, np.vstack([x, x]), np.concatenate([y, y]))
    assert l1 == pytest.approx(l2, abs=1e-12)
    np.testing.assert_allclose(g1, g2, atol=1e-12)


def test_shape_mismatch():
    params = zeros(ModelSpec(3, 2))
    with pytest.raises(ShapeMismatch):
        loss_and_gradient(params, np.zeros((2, 4)), [0, 1])
    with pytest.raises(ShapeMismatch):
        loss_and_gradient(params, np.zeros((0, 3)), [])
    with pytest.raises(ShapeMismatch):
        evaluate(params, np.zeros((1, 3)), [2])


@pytest.mark.parametrize("backend", BACKENDS)
def test_zero_learning_rate_is_identity(backend):
    params, x, y = random_instance(2)
    out = local_train(params, x, y, 3, 0.0, 2, derive_stream(0, "s"), backend=backend)
    assert np.array_equal(out.values, params.values)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("hidden", [0, 5])
def test_single_sample_is_one_step(backend, hidden):
    params, x, y = random_instance(4, hidden)
    x, y = x[:1], y[:1]
    _, grad = loss_and_gradient(params, x, y)
    before = params.values.copy()
    out = local_train(params, x, y, 1, 0.1, 32, derive_stream(0, "s"), backend=backend)
    np.testing.assert_allclose(out.values, before - 0.1 * grad, atol=1e-14)
    assert np.array_equal(params.values, before)


@pytest.mark.parametrize("hidden", [0, 6])
def test_backends_agree(hidden):
    if "numba" not in BACKENDS:
        pytest.skip("numba not installed")
    ds = generate_synthetic(157, 7, 4, 2.0, derive_stream(0, "d"))
    params = init_params(ModelSpec(7, 4, hidden), derive_stream(0, "i"))
    a = local_train(params, ds.features, ds.labels, 3, 0.05, 16, derive_stream(0, "s"), "numpy")
    b = local_train(params, ds.features, ds.labels, 3, 0.05, 16, derive_stream(0, "s"), "numba")
    np.testing.assert_allclose(a.values, b.values, rtol=0, atol=1e-12)


def centralized_sgd(params, x, y, epochs, lr, batch_size, rng):
    """Reference mini-batch SGD written against loss_and_gradient only."""
    values = params.values.copy()
    for order in epoch_orders(len(y), epochs, rng):
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            _, g = loss_and_gradient(ModelParams(values, params.spec), x[idx], y[idx])
            values = values - lr * g
    return values


@pytest.mark.parametrize("backend", BACKENDS)
def test_single_client_equals_centralized_sgd(backend):
    ds = generate_synthetic(203, 5, 3, 2.0, derive_stream(1, "d"))
    params = init_params(ModelSpec(5, 3), derive_stream(1, "i"))
    ref = centralized_sgd(params, ds.features, ds.labels, 2, 0.05, 32, derive_stream(1, "s"))
    got = local_train(params, ds.features, ds.labels, 2, 0.05, 32, derive_stream(1, "s"),
                      backend=backend).values
    if backend == "numpy":
        assert np.array_equal(got, ref)
    else:
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)


def test_training_reduces_loss():
    drops = []
    for seed in range(20):
        ds = generate_synthetic(300, 10, 5, 3.0, derive_stream(seed, "d"))
        params = init_params(ModelSpec(10, 5), derive_stream(seed, "i"))
        before = loss_and_gradient(params, ds.features, ds.labels)[0]
        after_params = local_train(params, ds.features, ds.labels, 3, 0.01, 32,
                                   derive_stream(seed, "s"))
        drops.append(before - loss_and_gradient(after_params, ds.features, ds.labels)[0])
    assert np.median(drops) > 0


def test_evaluate_perfect_separation():
    spec = ModelSpec(2, 2)
    # logits = x @ W, W = identity scaled
    params = ModelParams(np.array([10.0, 0.0, 0.0, 10.0, 0.0, 0.0]), spec)
    x = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.5]])
    acc, _, probs = evaluate(params, x, [0, 1, 0])
    assert acc == 1.0
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_evaluate_zero_params_uniform_and_tie_to_lowest():
    acc, loss, probs = evaluate(zeros(ModelSpec(3, 4)), np.ones((4, 3)), [0, 1, 2, 3])
    assert np.array_equal(probs, np.full((4, 4), 0.25))
    assert acc == 0.25  # every argmax tie resolves to class 0
    assert loss == pytest.approx(math.log(4))


def test_random_params_near_chance():
    accs = []
    for seed in range(50):
        ds = generate_synthetic(500, 20, 10, 3.0, derive_stream(seed, "d"))
        params = init_params(ModelSpec(20, 10), derive_stream(seed, "i"))
        accs.append(evaluate(params, ds.features, ds.labels)[0])
    assert np.mean(accs) == pytest.approx(0.1, abs=0.05)


@given(st.integers(0, 10_000), st.sampled_from([0, 3]))
@settings(max_examples=40, deadline=None)
def test_probabilities_are_distributions(seed, hidden):
    params, x, y = random_instance(seed, hidden)
    _, _, probs = evaluate(ModelParams(params.values * 20, params.spec), x, y)
    assert (probs >= 0).all()
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_blob_roundtrip(tmp_path):
    params = init_params(ModelSpec(6, 3, 4), derive_stream(0, "i"))
    blob = params_to_bytes(params)
    assert blob[:4] == b"FSMP" and len(blob) == 28 + 8 * params.spec.n_params
    back = params_from_bytes(blob)
    assert back.spec == params.spec and np.array_equal(back.values, params.values)
    save_params(params, tmp_path / "p.bin")
    assert np.array_equal(load_params(tmp_path / "p.bin").values, params.values)
    with pytest.raises(ValueError):
        params_from_bytes(blob[:-8])
    with pytest.raises(ValueError):
        params_from_bytes(b"XXXX" + blob[4:])
