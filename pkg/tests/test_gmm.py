import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import norm

from aar.errors import DegenerateInput
from aar.gmm import (
    GmmConfig,
    GmmFit,
    fit_gmm2,
    intersection_threshold,
    soft_threshold,
    z_sigma_threshold,
)


def make_fit(mu, sigma, pi=(0.5, 0.5)):
    return GmmFit(pi=pi, mu=mu, sigma=sigma, log_likelihood=0.0, iterations=0)


def mixture_sample(seed, n=5000):
    rng = np.random.default_rng(seed)
    lab = rng.random(n) < 0.2
    return np.where(lab, rng.normal(6.0, 1.0, n), rng.normal(2.0, 0.5, n))


class TestFit:
    def test_recovers_generating_parameters(self):
        fit = fit_gmm2(mixture_sample(7))
        assert fit.mu[0] == pytest.approx(2.0, abs=0.1)
        assert fit.mu[1] == pytest.approx(6.0, abs=0.1)
        assert fit.pi[0] == pytest.approx(0.8, abs=0.05)
        assert fit.pi[1] == pytest.approx(0.2, abs=0.05)
        assert fit.sigma[0] == pytest.approx(0.5, abs=0.05)
        assert fit.sigma[1] == pytest.approx(1.0, abs=0.1)

    def test_agrees_with_sklearn(self):
        sklearn_mixture = pytest.importorskip("sklearn.mixture")
        s = mixture_sample(3)
        ref = sklearn_mixture.GaussianMixture(2, tol=1e-10, max_iter=1000, random_state=0).fit(s[:, None])
        order = np.argsort(ref.means_.ravel())
        fit = fit_gmm2(s, GmmConfig(max_iterations=1000, convergence_tol=1e-10))
        np.testing.assert_allclose(fit.mu, ref.means_.ravel()[order], atol=1e-3)
        np.testing.assert_allclose(fit.pi, ref.weights_[order], atol=1e-3)
        np.testing.assert_allclose(np.square(fit.sigma), ref.covariances_.ravel()[order], rtol=1e-2)

    def test_constant_batch(self):
        with pytest.raises(DegenerateInput):
            fit_gmm2([3.0] * 20)

    def test_too_small(self):
        with pytest.raises(DegenerateInput):
            fit_gmm2([1.0, 2.0, 3.0])

    def test_two_point_clusters(self):
        s = np.array([0.0] * 50 + [10.0] * 50)
        fit = fit_gmm2(s)
        assert fit.mu == pytest.approx((0.0, 10.0), abs=1e-9)
        assert fit.pi == pytest.approx((0.5, 0.5), abs=1e-9)
        floor = math.sqrt(1e-6 * np.var(s))
        assert fit.sigma == pytest.approx((floor, floor), rel=1e-9)

    def test_invariants(self):
        fit = fit_gmm2(mixture_sample(11, n=300))
        assert 0 <= fit.pi[0] <= 1 and abs(sum(fit.pi) - 1) < 1e-12
        assert fit.mu[0] <= fit.mu[1]
        assert min(fit.sigma) > 0

    def test_monotone_log_likelihood(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            s = rng.gamma(2.0, 1.0, size=rng.integers(8, 200))
            trace = np.array(fit_gmm2(s).trace)
            assert np.all(np.diff(trace) >= -1e-9)

    def test_deterministic(self):
        s = mixture_sample(5, n=500)
        assert fit_gmm2(s, seed=1) == fit_gmm2(s, seed=1)

    def test_shift_equivariance(self):
        s = mixture_sample(9, n=400)
        a, b = fit_gmm2(s), fit_gmm2(s + 3.0)
        np.testing.assert_allclose(np.array(b.mu) - 3.0, a.mu, atol=1e-6)
        np.testing.assert_allclose(b.sigma, a.sigma, rtol=1e-5)
        np.testing.assert_allclose(b.pi, a.pi, atol=1e-6)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GmmConfig(max_iterations=0)
        with pytest.raises(ValueError):
            GmmConfig(convergence_tol=0)


class TestIntersection:
    def test_equal_variance_midpoint(self):
        assert intersection_threshold(make_fit((0.0, 10.0), (1.0, 1.0))) == pytest.approx(5.0)

    def test_unequal_variance_against_root_finder(self):
        fit = make_fit((2.0, 5.0), (0.5, 1.0))
        tau = intersection_threshold(fit)
        oracle = brentq(lambda x: norm.pdf(x, 2, 0.5) - norm.pdf(x, 5, 1), 2.0, 5.0, xtol=1e-14)
        assert tau == pytest.approx(oracle, abs=1e-10)
        assert tau == pytest.approx(3.112, abs=1e-3)
        assert norm.pdf(tau, 2, 0.5) == pytest.approx(0.0671, abs=1e-4)
        assert norm.pdf(tau, 5, 1.0) == pytest.approx(0.0671, abs=1e-4)

    def test_identical_components(self):
        assert intersection_threshold(make_fit((3.0, 3.0), (1.0, 1.0))) is None

    def test_no_root_between_means(self):
        # near-equal means, first density dominates on the whole interval
        assert intersection_threshold(make_fit((0.0, 0.1), (1.0, 1.05))) is None

    def test_density_equality_random(self):
        rng = np.random.default_rng(1)
        returned = 0
        for _ in range(500):
            m1 = rng.uniform(0, 5)
            fit = make_fit((m1, m1 + rng.uniform(0.1, 5)), tuple(rng.uniform(0.1, 2.0, 2)))
            tau = intersection_threshold(fit)
            if tau is None:
                continue
            returned += 1
            assert fit.mu[0] < tau < fit.mu[1]
            gap = norm.pdf(tau, fit.mu[0], fit.sigma[0]) - norm.pdf(tau, fit.mu[1], fit.sigma[1])
            assert abs(gap) < 1e-8
        assert returned > 400


class TestZSigmaAndSoft:
    def test_direct(self):
        fit = make_fit((2.0, 5.0), (0.5, 1.0))
        assert z_sigma_threshold(fit, 2.5) == pytest.approx(3.25)
        assert z_sigma_threshold(fit, 0.0) == 2.0

    def test_linear_in_sigma(self):
        a = z_sigma_threshold(make_fit((2.0, 5.0), (0.5, 1.0)), 2.5) - 2.0
        b = z_sigma_threshold(make_fit((2.0, 5.0), (1.0, 1.0)), 2.5) - 2.0
        assert b == pytest.approx(2 * a)

    def test_soft_is_max(self):
        # tau_sigma = 3.25 beats tau_I = 3.112
        assert soft_threshold(make_fit((2.0, 5.0), (0.5, 1.0)), 2.5) == pytest.approx(3.25)

    def test_soft_falls_back_to_tau_sigma(self):
        fit = make_fit((0.0, 0.1), (1.0, 1.05))
        assert soft_threshold(fit, 2.5) == pytest.approx(2.5)

    def test_separated_mixture_uses_intersection(self):
        # equal variances: intersection = midpoint 8, tau_sigma = 2 + 2.5 * 0.5
        fit = make_fit((2.0, 14.0), (0.5, 0.5))
        assert intersection_threshold(fit) == pytest.approx(8.0)
        assert soft_threshold(fit, 2.5) == pytest.approx(8.0)
