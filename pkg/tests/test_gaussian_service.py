import json

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import norm

from models.mixture import DiagGaussian, GaussianMixture, mixture_from_json, mixture_to_json
from services.gaussian_service import (GaussianMixtureFitter, diag_log_pdf, fit_em, gaussian_cross_entropy,
                                       gaussian_entropy, gaussian_kl, gmm_log_pdf, gmm_mean, gmm_sample,
                                       mc_kl, responsibilities)


def g(mean, var):
    return DiagGaussian(mean=np.atleast_1d(np.asarray(mean, dtype=float)),
                        var=np.atleast_1d(np.asarray(var, dtype=float)))


def _random_gaussian(rng, d=3):
    return g(rng.normal(size=d) * 3, rng.uniform(0.05, 5.0, size=d))


def test_kl_examples():
    assert gaussian_kl(g(0, 1), g(0, 1)) == 0.0
    assert gaussian_kl(g(0, 1), g(1, 1)) == pytest.approx(0.5)
    assert gaussian_kl(g(0, 1), g(0, 4)) == pytest.approx(np.log(2) + 1 / 8 - 1 / 2)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(0)
    p = GaussianMixture(weights=np.array([1.0]), components=(g(0, 1),))
    q = GaussianMixture(weights=np.array([1.0]), components=(g(0, 4),))
    estimate, se = mc_kl(p, q, 200000, rng)
    assert abs(estimate - gaussian_kl(g(0, 1), g(0, 4))) < 4 * se + 1e-3


def test_kl_dimension_mismatch():
    with pytest.raises(ValueError):
        gaussian_kl(g([0, 0], [1, 1]), g(0, 1))
    with pytest.raises(ValueError):
        gaussian_cross_entropy(g([0, 0], [1, 1]), g(0, 1))


def test_entropy_examples():
    assert gaussian_entropy(g(0, 1)) == pytest.approx(0.5 * np.log(2 * np.pi * np.e))
    assert gaussian_entropy(g(0, 1)) == pytest.approx(1.4189, abs=1e-4)
    assert gaussian_entropy(g([0, 0], [1, 1])) == pytest.approx(2 * gaussian_entropy(g(0, 1)))
    p = g([1.0, -2.0], [0.3, 2.0])
    assert gaussian_cross_entropy(p, p) == pytest.approx(gaussian_entropy(p))


def test_kl_properties_on_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        p, q = _random_gaussian(rng), _random_gaussian(rng)
        kl = gaussian_kl(p, q)
        assert kl >= 0
        assert gaussian_kl(p, p) == 0.0
        assert gaussian_cross_entropy(p, q) - gaussian_entropy(p) == pytest.approx(kl, abs=1e-12, rel=1e-12)


def test_diag_log_pdf_matches_scipy():
    comp = g([1.0, -1.0], [0.5, 2.0])
    x = np.array([[0.3, 0.2], [2.0, -4.0]])
    expected = norm.logpdf(x[:, 0], 1.0, np.sqrt(0.5)) + norm.logpdf(x[:, 1], -1.0, np.sqrt(2.0))
    assert diag_log_pdf(comp, x) == pytest.approx(expected)
    assert float(diag_log_pdf(comp, x[0])) == pytest.approx(expected[0])


def test_gmm_log_pdf_single_and_duplicate_components():
    comp = g([0.5], [2.0])
    single = GaussianMixture(weights=np.array([1.0]), components=(comp,))
    duplicate = GaussianMixture(weights=np.array([0.3, 0.7]), components=(comp, comp))
    x = np.array([1.3])
    assert gmm_log_pdf(single, x) == pytest.approx(float(diag_log_pdf(comp, x)))
    assert gmm_log_pdf(duplicate, x) == pytest.approx(float(diag_log_pdf(comp, x)))


def test_gmm_log_pdf_integrates_to_one(make_mixture):
    m = make_mixture([0.2, 0.5, 0.3], [[-3.0], [0.0], [4.0]], [[0.5], [1.0], [2.0]])
    grid = np.linspace(-3.0 - 10 * np.sqrt(2.0), 4.0 + 10 * np.sqrt(2.0), 20001)[:, None]
    assert trapezoid(np.exp(gmm_log_pdf(m, grid)), grid[:, 0]) == pytest.approx(1.0, abs=1e-4)


def test_gmm_sample_mean(make_mixture):
    m = make_mixture([0.25, 0.75], [[-2.0, 1.0], [3.0, 0.0]], [[1.0, 0.5], [2.0, 1.0]])
    samples = gmm_sample(m, np.random.default_rng(2), size=100000)
    se = samples.std(axis=0) / np.sqrt(samples.shape[0])
    assert np.all(np.abs(samples.mean(axis=0) - gmm_mean(m)) < 3 * se)
    assert gmm_sample(m, np.random.default_rng(2)).shape == (2,)


def test_responsibilities_are_simplex(make_mixture):
    m = make_mixture([0.5, 0.5], [[-5.0], [5.0]], [[1.0], [1.0]])
    resp = responsibilities(m, np.array([[-5.0], [0.0], [5.0]]))
    assert np.allclose(resp.sum(axis=1), 1.0)
    assert resp[0, 0] > 0.99 and resp[2, 1] > 0.99
    assert resp[1] == pytest.approx([0.5, 0.5])


def test_em_recovers_separated_modes():
    rng = np.random.default_rng(3)
    samples = np.concatenate([rng.normal(-5, 1, 1000), rng.normal(5, 1, 1000)])
    fitted = fit_em(samples, 2, seed=0)
    means = np.sort(fitted.means[:, 0])
    assert means[0] == pytest.approx(-5.0, abs=0.3)
    assert means[1] == pytest.approx(5.0, abs=0.3)


def test_em_single_component_is_sample_moments():
    rng = np.random.default_rng(4)
    samples = rng.normal(size=(500, 2)) * [1.0, 3.0] + [2.0, -1.0]
    fitted = fit_em(samples, 1, seed=0)
    assert fitted.means[0] == pytest.approx(samples.mean(axis=0))
    assert fitted.vars[0] == pytest.approx(samples.var(axis=0))


def test_em_is_deterministic():
    samples = np.random.default_rng(5).normal(size=(300, 2))
    a, b = fit_em(samples, 3, seed=11), fit_em(samples, 3, seed=11)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.weights, b.weights)


@pytest.mark.parametrize('seed', [0, 1, 2, 3])
def test_batch_em_log_likelihood_non_decreasing(seed):
    rng = np.random.default_rng(seed)
    samples = np.concatenate([rng.normal(rng.uniform(-4, 4), rng.uniform(0.5, 2), size=(100, 2))
                              for _ in range(3)])
    fitter = GaussianMixtureFitter(3, seed=seed, max_iters=100)
    fitter.fit(samples)
    trace = np.array(fitter.log_likelihood_trace)
    assert np.all(np.diff(trace) >= -1e-9)


def test_em_degenerate_data():
    fitted = fit_em(np.full((50, 2), 3.0), 4, seed=0)
    assert fitted.n_components == 1
    assert np.allclose(fitted.means[0], 3.0)
    assert np.all(fitted.vars >= 1e-6)


def test_em_needs_enough_samples():
    with pytest.raises(ValueError):
        fit_em(np.zeros((2, 1)), 3)


@pytest.mark.parametrize('max_iters', [0, -1])
def test_em_rejects_non_positive_iterations(max_iters):
    with pytest.raises(ValueError):
        fit_em(np.arange(10.0), 2, max_iters=max_iters)


def test_stochastic_em_is_deterministic_and_close():
    rng = np.random.default_rng(6)
    samples = np.concatenate([rng.normal(-5, 1, 1000), rng.normal(5, 1, 1000)])
    a = fit_em(samples, 2, seed=1, max_iters=100, mode='stochastic')
    b = fit_em(samples, 2, seed=1, max_iters=100, mode='stochastic')
    assert np.array_equal(a.means, b.means)
    assert np.sort(a.means[:, 0]) == pytest.approx([-5.0, 5.0], abs=0.5)


def test_mixture_json_round_trip(tmp_path, make_mixture):
    m = make_mixture([0.1, 0.9], [[0.0, 1.0], [2.0, 3.0]], [[1.0, 1.0], [0.5, 0.25]])
    path = tmp_path / 'm.json'
    path.write_text(json.dumps(mixture_to_json(m)))
    back = mixture_from_json(json.loads(path.read_text()))
    assert np.array_equal(back.weights, m.weights)
    assert np.array_equal(back.means, m.means)


def test_mixture_invariants():
    with pytest.raises(ValueError):
        GaussianMixture(weights=np.array([0.5, 0.6]), components=(g(0, 1), g(1, 1)))
    with pytest.raises(ValueError):
        GaussianMixture(weights=np.array([0.5, 0.5]), components=(g(0, 1), g([1, 1], [1, 1])))
    with pytest.raises(ValueError):
        g(0, 1e-9)
