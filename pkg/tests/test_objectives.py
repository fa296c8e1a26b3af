import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stalesgd.objectives import (
    DimensionError,
    LogisticRegression,
    ObjectiveSpec,
    Quadratic,
    TinyMLP,
    finite_difference_check,
    full_loss,
    gradient_norm_sq,
    minibatch_gradient,
)

X4 = [[1.0, 2.0], [-1.0, 0.5], [0.3, -1.0], [2.0, 1.0]]
Y4 = [1, 0, 0, 1]


def _ref_logistic_loss(theta, X, y):
    # independent scalar implementation of the mean cross-entropy
    total = 0.0
    for xi, yi in zip(X, y):
        z = sum(w * v for w, v in zip(theta[:-1], xi)) + theta[-1]
        total += math.log1p(math.exp(z)) - yi * z
    return total / len(X)


def _central_diff(f, theta, h=1e-5):
    out = []
    for k in range(len(theta)):
        up, dn = list(theta), list(theta)
        up[k] += h
        dn[k] -= h
        out.append((f(up) - f(dn)) / (2 * h))
    return np.array(out)


@pytest.fixture(scope="module")
def quad():
    return Quadratic.generate(np.diag([3.0, 1.0, 0.5]), [1.0, -2.0, 0.5], 200, seed=1, noise=0.3)


@pytest.fixture(scope="module")
def lsq():
    return ObjectiveSpec(kind="quadratic", dataset_size=300, seed=2, eigenvalues=[0.5, 1.0, 2.0, 4.0],
                         curvature="rank_one", noise=0.4).build()


@pytest.fixture(scope="module")
def logreg():
    return LogisticRegression.generate(300, 5, seed=3)


@pytest.fixture(scope="module")
def mlp():
    return TinyMLP.generate([2, 4, 1], 64, seed=4)


def test_quadratic_identity_gradient():
    q = Quadratic(np.eye(2), [0.0, 0.0], dataset_size=10)
    for batch in ([0], [3, 4, 9], list(range(10))):
        np.testing.assert_array_equal(minibatch_gradient(q, [3.0, -2.0], batch), [3.0, -2.0])


def test_quadratic_linear_term():
    q = Quadratic(np.diag([2.0, 1.0]), [1.0, 0.0], dataset_size=5)
    np.testing.assert_array_equal(minibatch_gradient(q, [0.0, 0.0], [1, 2]), [-1.0, 0.0])


def test_quadratic_full_loss_values():
    q = Quadratic(np.eye(2), [0.0, 0.0], dataset_size=3)
    assert full_loss(q, [0.0, 0.0]) == 0.0
    assert full_loss(q, [1.0, 1.0]) == 1.0
    assert gradient_norm_sq(q, [3.0, 4.0]) == 25.0


def test_logistic_fixed_samples_against_oracle():
    lr = LogisticRegression(X4, Y4)
    g = minibatch_gradient(lr, np.zeros(3), [0, 1, 2, 3])
    # hand-derived at theta = 0: sigmoid = 1/2 everywhere
    np.testing.assert_allclose(g, [-0.4625, -0.4375, 0.0], atol=1e-15)
    fd = _central_diff(lambda t: _ref_logistic_loss(t, X4, Y4), [0.0, 0.0, 0.0])
    rel = np.abs(g - fd).max() / np.abs(fd).max()
    assert rel < 1e-6


def test_logistic_full_batch_equivalence(logreg):
    theta = np.random.default_rng(0).normal(size=logreg.dimension)
    g = minibatch_gradient(logreg, theta, np.arange(logreg.dataset_size))
    assert gradient_norm_sq(logreg, theta) == pytest.approx(g @ g, rel=1e-13)


def test_finite_difference_quadratic(quad, lsq):
    rng = np.random.default_rng(5)
    for obj in (quad, lsq):
        for _ in range(5):
            assert finite_difference_check(obj, rng.normal(size=obj.dimension), 1e-5) < 1e-8


def test_finite_difference_logistic(logreg):
    rng = np.random.default_rng(6)
    assert finite_difference_check(logreg, rng.normal(size=logreg.dimension), 1e-5) < 1e-5


def test_finite_difference_mlp(mlp):
    rng = np.random.default_rng(7)
    assert finite_difference_check(mlp, rng.normal(size=mlp.dimension), 1e-5) < 1e-4


def test_finite_difference_rejects_bad_step(quad):
    with pytest.raises(ValueError):
        finite_difference_check(quad, np.zeros(3), 0.0)


def test_gradient_vanishes_at_minimizer(quad, lsq):
    for obj in (quad, lsq):
        assert gradient_norm_sq(obj, obj.minimizer()) < 1e-10


def test_rank_one_averages_match(lsq):
    A_mean = lsq.rows.T @ lsq.rows / lsq.dataset_size
    np.testing.assert_allclose(A_mean, lsq.A, atol=1e-12)
    np.testing.assert_allclose(lsq.b_samples.mean(axis=0), lsq.b, atol=1e-12)
    assert np.all(lsq._loss_terms(np.zeros(4), lsq._all) >= 0)


def test_shared_noise_averages_match(quad):
    np.testing.assert_allclose(quad.b_samples.mean(axis=0), quad.b, atol=1e-12)
    assert quad.optimal_loss() == pytest.approx(0.0, abs=1e-12)


def test_mlp_loss_positive_and_descends(mlp):
    theta = mlp.init_params(np.random.default_rng(8))
    before = full_loss(mlp, theta)
    assert np.isfinite(before) and before > 0
    step = theta - 1e-2 * mlp.full_gradient(theta)
    assert full_loss(mlp, step) < before


def test_mlp_flatten_round_trip(mlp):
    theta = np.arange(mlp.dimension, dtype=float)
    np.testing.assert_array_equal(mlp.flatten(mlp.unflatten(theta)), theta)


def test_mlp_parameter_cap():
    with pytest.raises(ValueError):
        TinyMLP.generate([10, 500, 20], 8, seed=0)


def test_dimension_mismatch(quad, logreg):
    for obj in (quad, logreg):
        with pytest.raises(DimensionError):
            minibatch_gradient(obj, np.zeros(obj.dimension + 1), [0])
        with pytest.raises(DimensionError):
            full_loss(obj, np.zeros(obj.dimension - 1))
        with pytest.raises(DimensionError):
            gradient_norm_sq(obj, np.zeros(obj.dimension + 2))


def test_bad_batch_index(quad):
    with pytest.raises(IndexError):
        minibatch_gradient(quad, np.zeros(3), [0, 200])


def test_init_params_range(logreg):
    theta = logreg.init_params(np.random.default_rng(0))
    assert np.all(np.abs(theta) <= 0.1)


def test_quadratic_rejects_indefinite():
    with pytest.raises(ValueError):
        Quadratic(np.diag([1.0, -1.0]), [0.0, 0.0])


vec3 = arrays(np.float64, 3, elements=st.floats(-10, 10))


@settings(max_examples=50)
@given(vec3, vec3, st.lists(st.integers(0, 199), min_size=1, max_size=8))
def test_quadratic_gradient_is_affine(quad, t1, t2, batch):
    g = lambda t: minibatch_gradient(quad, t, batch)
    np.testing.assert_allclose(g(t1 + t2), g(t1) + g(t2) - g(np.zeros(3)), atol=1e-9)


@settings(max_examples=30)
@given(arrays(np.float64, 6, elements=st.floats(-3, 3)))
def test_full_batch_minibatch_equals_full_gradient(logreg, theta):
    full = minibatch_gradient(logreg, theta, np.arange(logreg.dataset_size))
    np.testing.assert_allclose(full, logreg.full_gradient(theta), rtol=0, atol=1e-15)
