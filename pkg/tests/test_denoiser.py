import numpy as np
import pytest

from diffsync import ContractError, GaussianMixture, GMMPredictor, gmm_posterior_mean, gmm_predict_eps, tweedie

from oracles import quadrature_posterior_mean


def _random_mixture(rng, d, k):
    w = rng.uniform(0.2, 1.0, size=k)
    return GaussianMixture(w / w.sum(), rng.uniform(-2, 2, size=(k, d)), rng.uniform(0.1, 0.8, size=k))


def _forward_sample(rng, gmm, ab):
    k = rng.choice(gmm.n_components, p=gmm.weights)
    x0 = gmm.means[k] + np.sqrt(gmm.variances[k]) * rng.normal(size=gmm.shape)
    return np.sqrt(ab) * x0 + np.sqrt(1 - ab) * rng.normal(size=gmm.shape)


@pytest.mark.parametrize("d", [1, 2])
def test_matches_quadrature(d, sched30, rng):
    gmm = _random_mixture(rng, d, 3)
    for _ in range(15):
        t = int(rng.integers(1, 1001))
        ab = sched30.alphas_bar[t]
        x_t = _forward_sample(rng, gmm, ab)
        ref = quadrature_posterior_mean(x_t, ab, gmm.weights, gmm.means, gmm.variances, n=4001 if d == 1 else 801)
        np.testing.assert_allclose(gmm_posterior_mean(x_t, t, sched30, gmm), ref, atol=1e-6)


def test_pixelwise_is_independent_1d_mixtures(sched30, rng):
    means = rng.normal(size=(2, 3, 4))
    gmm = GaussianMixture([0.4, 0.6], means, [0.2, 0.5], pixelwise=True)
    x = rng.normal(size=(3, 4))
    got = gmm_posterior_mean(x, 200, sched30, gmm)
    for idx in np.ndindex(3, 4):
        single = GaussianMixture([0.4, 0.6], means[(slice(None),) + idx][:, None], [0.2, 0.5])
        assert got[idx] == pytest.approx(gmm_posterior_mean(x[idx][None], 200, sched30, single)[0], abs=1e-13)


def test_single_gaussian_closed_form(sched30, rng):
    gmm = GaussianMixture([1.0], np.zeros((1, 50)), [1.0])
    x = rng.normal(size=50)
    for t in (1, 300, 1000):
        ab = sched30.alphas_bar[t]
        np.testing.assert_allclose(gmm_posterior_mean(x, t, sched30, gmm), np.sqrt(ab) * x, atol=1e-14)


def test_tiny_weight_and_far_component_are_stable(sched30):
    gmm = GaussianMixture([1 - 1e-300, 1e-300], [[0.0], [50.0]], [0.1, 0.1], pixelwise=True)
    for t in (1, 10, 1000):
        out = gmm_posterior_mean(np.array([1e3]), t, sched30, gmm)
        assert np.all(np.isfinite(out))
    out = gmm_posterior_mean(np.array([-40.0]), 1, sched30, gmm)
    assert np.isfinite(out[0])


def test_delta_like_prior_returns_its_mean(sched30, rng):
    mu = rng.normal(size=(1, 6))
    gmm = GaussianMixture([1.0], mu, [1e-20], pixelwise=True)
    for t in (1, 500, 1000):
        np.testing.assert_allclose(gmm_posterior_mean(rng.normal(size=6) * 10, t, sched30, gmm), mu[0], atol=1e-9)


def test_predicted_eps_reproduces_posterior_mean(sched30, rng):
    gmm = _random_mixture(rng, 5, 2)
    x = rng.normal(size=5)
    eps = gmm_predict_eps(x, 433, sched30, gmm)
    np.testing.assert_allclose(tweedie(x, eps, 433, sched30), gmm_posterior_mean(x, 433, sched30, gmm), atol=1e-12)


def test_predictor_is_deterministic(sched30, rng):
    p = GMMPredictor(_random_mixture(rng, 7, 3))
    x = rng.normal(size=7)
    assert np.array_equal(p.predict(x, 100, sched30), p.predict(x.copy(), 100, sched30))


def test_marginal_moments():
    gmm = GaussianMixture([0.25, 0.75], [[-1.0], [1.0]], [0.5, 0.1])
    mean, var = gmm.marginal_moments()
    assert mean[0] == pytest.approx(0.5)
    assert var[0] == pytest.approx(0.25 * 1.5 + 0.75 * 1.1 - 0.25)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(weights=[0.5, 0.6], means=[[0.0], [1.0]], variances=[1, 1]),
        dict(weights=[1.0], means=[[0.0]], variances=[0.0]),
        dict(weights=[1.0], means=[0.0], variances=[1.0]),
        dict(weights=[0.5, 0.5], means=[[0.0]], variances=[1.0, 1.0]),
    ],
)
def test_invalid_mixtures(kwargs):
    with pytest.raises(ContractError):
        GaussianMixture(**kwargs)


def test_shape_and_t_checked(sched30):
    gmm = GaussianMixture([1.0], np.zeros((1, 3)), [1.0])
    with pytest.raises(ContractError):
        gmm_posterior_mean(np.zeros(4), 10, sched30, gmm)
    with pytest.raises(ContractError):
        gmm_posterior_mean(np.zeros(3), 0, sched30, gmm)
