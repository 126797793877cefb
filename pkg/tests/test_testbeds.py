"""Small fully-known problems behind the distance-to-data checks."""

import logging

import numpy as np
import pytest

from score_guided_planning.testbeds import (
    counterexample_report,
    cubic,
    error_bound_check,
    landing_rate,
    regression_testbed,
)

from conftest import random_points


def test_regression_testbed_and_error_bound():
    testbed = regression_testbed(n_points=12, seed=1, hidden=(16,), steps=300)
    assert testbed.x_data.shape == (12,) and np.all(np.diff(testbed.x_data) >= 0)
    np.testing.assert_allclose(testbed.y_data, cubic(testbed.x_data))
    df = error_bound_check(testbed, sigma=0.05, grid_size=401)
    assert list(df.columns) == ["z", "true_error", "bound"]
    assert df["z"].min() == testbed.x_data.min() and df["z"].max() == testbed.x_data.max()
    assert (df["bound"] >= df["true_error"] - 1e-12).all()


def test_landing_rate_on_separated_points():
    pts = random_points(0, 10, 2)
    inits = random_points(1, 25, 2, scale=2.0)
    rate, dist = landing_rate(pts, np.geomspace(1.0, 1e-3, 10), inits, tolerance=1e-3)
    assert rate == 1.0 and dist.shape == (25,)


def test_failed_descent_counts_as_not_landed(caplog):
    with caplog.at_level(logging.WARNING):
        rate, dist = landing_rate(
            np.zeros((1, 1)), [0.5], np.array([[1.0], [2.0]]), 1e-3, step_size=3.0
        )
    assert rate == 0.0 and np.all(np.isinf(dist))
    assert "retrying run by run" in caplog.text


def test_counterexample_report():
    report = counterexample_report(alpha=1e-2, omega=1e3, n=100_001)
    assert report["alpha_omega"] == pytest.approx(10.0)
    assert report["max_value_error"] <= 1e-2 + 1e-12
    assert report["max_slope_error"] > 0.8 * report["alpha_omega"]
