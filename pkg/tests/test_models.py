import math

import numpy as np
import pytest

from pvi_jensen import models
from pvi_jensen.numerics import finite_diff_grad


def linear_spec(**kw):
    return models.ModelSpec(input_dim=1, **kw)


def test_zero_params_give_zero_output():
    spec = models.ModelSpec(input_dim=3, output_dim=2, hidden=(4,))
    assert np.all(models.forward(spec, np.zeros(spec.num_params), [1.0, -2.0, 3.0]) == 0)


def test_single_linear_layer():
    assert models.forward(linear_spec(), np.array([2.0, 1.0]), [3.0])[0] == 7.0


def test_two_layer_matches_naive(rng):
    spec = models.ModelSpec(input_dim=3, output_dim=2, hidden=(5,))
    p = rng.normal(size=spec.num_params)
    W1 = p[:15].reshape(3, 5)
    b1 = p[15:20]
    W2 = p[20:30].reshape(5, 2)
    b2 = p[30:32]
    x = rng.normal(size=3)
    oracle = np.maximum(x @ W1 + b1, 0) @ W2 + b2
    np.testing.assert_allclose(models.forward(spec, p, x), oracle, atol=1e-12)


def test_dimension_mismatch():
    spec = models.ModelSpec(input_dim=2)
    with pytest.raises(models.DimensionMismatch):
        models.forward(spec, np.zeros(spec.num_params), [1.0, 2.0, 3.0])
    with pytest.raises(models.DimensionMismatch):
        models.forward(spec, np.zeros(spec.num_params + 1), [1.0, 2.0])


def test_log_lik_examples():
    spec = linear_spec(bias=False)
    assert models.log_lik(spec, np.array([1.0]), ([2.0], 2.0)) == pytest.approx(
        -0.5 * math.log(2 * math.pi), abs=1e-15)
    cat = models.ModelSpec(input_dim=1, output_dim=2, likelihood="categorical", bias=False)
    assert models.log_lik(cat, np.zeros(2), ([1.0], 0)) == pytest.approx(math.log(0.5))


def test_log_lik_toy_sigma_matches_density():
    spec = models.ModelSpec(input_dim=1, hidden=(3,), sigma=0.2)
    p = np.linspace(-1, 1, spec.num_params)
    f = models.forward(spec, p, [0.4])[0]
    y = 0.9
    oracle = -0.5 * math.log(2 * math.pi * 0.04) - (y - f) ** 2 / (2 * 0.04)
    assert models.log_lik(spec, p, ([0.4], y)) == pytest.approx(oracle, abs=1e-12)


def test_grad_log_lik_examples():
    spec = linear_spec(bias=False)
    assert models.grad_log_lik(spec, np.array([0.0]), ([2.0], 1.0))[0] == pytest.approx(2.0)
    spec = models.ModelSpec(input_dim=1, hidden=(3,))
    p = np.linspace(-1, 1, spec.num_params)
    y = models.forward(spec, p, [0.3])[0]
    g = models.grad_log_lik(spec, p, ([0.3], y))
    assert np.all(g[-4:] == 0)


@pytest.mark.parametrize("likelihood", ["gaussian", "categorical"])
def test_grad_log_lik_finite_differences(rng, likelihood):
    out = 1 if likelihood == "gaussian" else 3
    spec = models.ModelSpec(input_dim=2, output_dim=out, hidden=(4,), activation="tanh",
                            likelihood=likelihood, learn_sigma=likelihood == "gaussian")
    y = 0.3 if likelihood == "gaussian" else 2
    for _ in range(20):
        p = rng.normal(size=spec.num_params)
        x = rng.normal(size=2)
        fd = finite_diff_grad(lambda t: models.log_lik(spec, t, (x, y)), p)
        g = models.grad_log_lik(spec, p, (x, y))
        assert np.max(np.abs(g - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))


def test_prior_gradient_finite_differences(rng):
    prior = models.Prior(0.3, 2.0)
    for _ in range(100):
        p = rng.normal(size=5)
        fd = finite_diff_grad(lambda t: models.log_prior(prior, t), p)
        np.testing.assert_allclose(models.grad_log_prior(prior, p), fd, rtol=1e-4, atol=1e-8)


def test_grad_output_examples(rng):
    spec = linear_spec(bias=False)
    f, dldf, jt = models.grad_output(spec, np.array([0.0]), ([1.0], 1.0))
    assert f[0] == 0 and dldf[0] == 1.0
    spec = models.ModelSpec(input_dim=2, output_dim=2, hidden=(3,))
    p = rng.normal(size=spec.num_params)
    _, _, jt = models.grad_output(spec, p, ([0.1, 0.2], [0.0, 0.0]))
    assert np.all(jt(np.zeros(2)) == 0)


def test_grad_output_contraction_finite_differences(rng):
    spec = models.ModelSpec(input_dim=2, output_dim=2, hidden=(3,), activation="tanh")
    p = rng.normal(size=spec.num_params)
    x = rng.normal(size=2)
    v = rng.normal(size=2)
    _, _, jt = models.grad_output(spec, p, (x, [0.0, 0.0]))
    fd = finite_diff_grad(lambda t: float(v @ models.forward(spec, t, x)), p)
    np.testing.assert_allclose(jt(v), fd, atol=1e-5)


@pytest.mark.parametrize("likelihood", ["gaussian", "categorical"])
def test_chain_consistency(rng, likelihood):
    out = 1 if likelihood == "gaussian" else 3
    spec = models.ModelSpec(input_dim=2, output_dim=out, hidden=(4,), likelihood=likelihood)
    p = rng.normal(size=spec.num_params)
    datum = (rng.normal(size=2), 0.5 if likelihood == "gaussian" else 1)
    _, dldf, jt = models.grad_output(spec, p, datum)
    np.testing.assert_allclose(jt(dldf), models.grad_log_lik(spec, p, datum), atol=1e-10)


def test_categorical_normalizes(rng):
    spec = models.ModelSpec(input_dim=2, output_dim=4, hidden=(3,), likelihood="categorical")
    p = rng.normal(size=spec.num_params)
    x = rng.normal(size=2)
    total = sum(math.exp(models.log_lik(spec, p, (x, c))) for c in range(4))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_log_prior_examples(rng):
    prior = models.Prior(0.0, 1.0)
    assert models.log_prior(prior, np.zeros(3)) == pytest.approx(-1.5 * math.log(2 * math.pi))
    assert np.all(models.grad_log_prior(prior, np.zeros(3)) == 0)
    assert models.log_prior(prior, np.array([1.0, 0.0])) == pytest.approx(-math.log(2 * math.pi) - 0.5)
    np.testing.assert_array_equal(models.grad_log_prior(prior, np.array([1.0, 0.0])), [-1.0, 0.0])
    p = rng.normal(size=4)
    oracle = sum(-0.5 * math.log(4 * math.pi) - t**2 / 4 for t in p)
    assert models.log_prior(models.Prior(0.0, 2.0), p) == pytest.approx(oracle, abs=1e-12)


def test_prior_validation():
    with pytest.raises(ValueError):
        models.Prior(0.0, 0.0)


def test_function_prior_linear_covariance(rng):
    spec = linear_spec(bias=False)
    fp = models.fit_function_prior(spec, models.Prior(0.0, 1.0), np.array([[1.0], [2.0]]),
                                   rng, 10_000)
    np.testing.assert_allclose(fp.covariance, [[1, 2], [2, 4]], rtol=0.1)


def test_function_prior_zero_output():
    spec = linear_spec(bias=False)
    fp = models.fit_function_prior(spec, models.Prior(), np.array([[0.0], [0.0]]),
                                   samples=np.array([[0.5], [-1.0], [2.0]]))
    np.testing.assert_array_equal(fp.mean, [0.0, 0.0])
    np.testing.assert_allclose(fp.covariance, 1e-6 * np.eye(2))


def test_function_prior_equal_draws():
    spec = linear_spec(bias=False)
    fp = models.fit_function_prior(spec, models.Prior(), np.array([[1.0], [2.0]]),
                                   samples=np.array([[0.7], [0.7]]))
    np.testing.assert_allclose(fp.covariance, 1e-6 * np.eye(2))
    with pytest.raises(ValueError):
        models.fit_function_prior(spec, models.Prior(), np.array([[1.0]]), None, num_samples=1)


def test_init_params_scale(rng):
    spec = models.ModelSpec(input_dim=100, hidden=(200,))
    p = models.init_params(spec, rng)
    W1 = p[: 100 * 200]
    assert np.std(W1) == pytest.approx(math.sqrt(2 / 100), rel=0.05)


def test_spec_roundtrip():
    spec = models.ModelSpec(input_dim=3, output_dim=2, hidden=(5, 4), likelihood="categorical")
    assert models.ModelSpec.from_dict(spec.to_dict()) == spec
