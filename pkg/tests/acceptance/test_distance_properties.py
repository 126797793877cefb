"""
Numerical checks of the smoothed distance to data and its closed-form score.

All of these are exact statements about the Gaussian mixture over the data,
so they are checked on many random datasets rather than on one fixture.
"""

import math

import numpy as np
import pytest

from score_guided_planning import autodiff as ad
from score_guided_planning.distance import (
    annealed_descent,
    exact_score,
    perturbed_log_likelihood,
    softmin_distance_sq,
    squared_distances,
)
from score_guided_planning.score_model import make_schedule
from score_guided_planning.testbeds import (
    counterexample_report,
    error_bound_check,
    landing_rate,
    regression_testbed,
)

pytestmark = pytest.mark.slow


def test_log_likelihood_and_softmin_differ_by_a_constant():
    rng = np.random.default_rng(0)
    for _ in range(200):
        N, d = int(rng.integers(1, 101)), int(rng.integers(1, 9))
        sigma = float(rng.uniform(0.05, 2.0))
        D = rng.standard_normal((N, d))
        z = 2.0 * rng.standard_normal((20, d))
        ll = perturbed_log_likelihood(z, D, sigma)
        residual = -(sigma**2) * ll - softmin_distance_sq(z, D, sigma, C=0.0)
        assert np.ptp(residual) < 1e-8
        expected = sigma**2 * (math.log(N) + 0.5 * d * math.log(2.0 * math.pi * sigma**2))
        np.testing.assert_allclose(residual, expected, rtol=1e-9, atol=1e-9)


def test_exact_score_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(500):
        N, d = int(rng.integers(1, 31)), int(rng.integers(1, 5))
        sigma = float(rng.uniform(0.3, 1.5))
        D = rng.standard_normal((N, d))
        z = rng.standard_normal(d)
        fd = ad.numerical_gradient(lambda v: perturbed_log_likelihood(v, D, sigma), z, h=1e-5)
        assert ad.relative_error(exact_score(z, D, sigma), fd) < 1e-6


def test_annealed_descent_lands_on_the_data():
    schedule = make_schedule(1.0, 1e-3, 10)
    tolerance = 1e-3 * schedule.sigmas[-1]
    rng = np.random.default_rng(2)
    landed = []
    for _ in range(20):
        D = rng.uniform(-1.0, 1.0, size=(10, 2))
        inits = rng.uniform(D.min(axis=0), D.max(axis=0), size=(100, 2))
        _, dist = landing_rate(D, schedule, inits, tolerance)
        landed.append(dist <= tolerance)
    assert np.mean(landed) >= 0.95


def test_symmetric_midpoint_is_a_fixed_point():
    D = np.array([[-1.0, 0.0], [1.0, 0.0]])
    final, _ = annealed_descent(np.zeros((1, 2)), D, make_schedule(1.0, 1e-3, 10))
    np.testing.assert_allclose(final, 0.0, atol=1e-12)
    assert np.sqrt(np.min(squared_distances(final, D))) == pytest.approx(1.0)


def test_lipschitz_bound_dominates_the_true_error():
    testbed = regression_testbed(n_points=20, seed=0)
    df = error_bound_check(testbed, sigma=0.05)
    inside = df[(df["z"] >= testbed.x_data.min()) & (df["z"] <= testbed.x_data.max())]
    assert len(inside) == len(df)
    assert (inside["bound"] >= inside["true_error"] - 1e-12).all()


def test_small_value_error_allows_a_large_slope_error():
    report = counterexample_report(alpha=1e-2, omega=1e3)
    assert report["max_value_error"] <= 1e-2
    assert report["max_slope_error"] >= 0.9 * report["alpha_omega"]
