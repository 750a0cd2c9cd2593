import numpy as np
import pytest

from gpimu import evaluation as ev
from gpimu.blocktri import BlockTriDiag
from gpimu.errors import SingularCovariance
from gpimu.estimators import EstimateResult, Method


def _result(means, covs, info=None):
    means = np.asarray(means, dtype=float)
    n, d = means.shape
    covs = np.asarray(covs, dtype=float)
    if info is None:
        info = BlockTriDiag(np.linalg.inv(covs), np.zeros((n - 1, d, d)))
    return EstimateResult(np.arange(n, dtype=float), means, covs, info, Method.INPUT)


def test_nees_zero_error():
    r = _result(np.ones((3, 2)), np.tile(np.eye(2), (3, 1, 1)))
    assert ev.nees_marginal(r, np.ones((3, 2)))[0] == 0.0
    assert ev.nees_full(r, np.ones((3, 2)))[0] == 0.0


def test_nees_quadratic_form():
    r = _result([[1.0, 0.0]], [np.eye(2)])
    assert ev.nees_marginal(r, np.zeros((1, 2))) == (0.5, 2)
    assert ev.nees_full(r, np.zeros((1, 2))) == (0.5, 2)


def test_nees_full_uses_cross_covariance():
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    info = BlockTriDiag(np.linalg.inv(cov)[None], np.zeros((0, 2, 2)))
    r = _result([[1.0, -1.0]], [cov], info)
    e = np.array([1.0, -1.0])
    assert ev.nees_full(r, np.zeros((1, 2)))[0] == pytest.approx(e @ np.linalg.solve(cov, e) / 2, rel=1e-12)


def test_singular_covariance():
    r = _result([[1.0, 0.0]], [np.zeros((2, 2))], BlockTriDiag(np.zeros((1, 2, 2)), np.zeros((0, 2, 2))))
    with pytest.raises(SingularCovariance):
        ev.nees_marginal(r, np.zeros((1, 2)))
    with pytest.raises(SingularCovariance):
        ev.nees_full(r, np.zeros((1, 2)))


def test_chi2_table_values():
    assert ev.chi2_bound(0.95, 1) == pytest.approx(3.8415, abs=1e-3)
    assert ev.chi2_bound(0.5, 2) == pytest.approx(2 * np.log(2), abs=1e-3)
    assert ev.chi2_bound(0.5, 2) == pytest.approx(2 * np.log(2), abs=1e-9)
    with pytest.raises(ValueError):
        ev.chi2_bound(1.0, 3)


def test_chi2_large_dof():
    from scipy.stats import chi2
    for dof in (33, 66, 33000):
        assert ev.chi2_bound(0.975, dof) == pytest.approx(chi2.ppf(0.975, dof), rel=1e-9)


def test_nees_band_scaling():
    lo, hi = ev.nees_band(22)
    assert lo < 1 < hi
    lo_n, hi_n = ev.nees_band(22, n=1000)
    assert lo < lo_n < 1 < hi_n < hi


def test_bias_all_zero():
    b = ev.bias_test(np.zeros(10))
    assert (b.ci_lo, b.ci_hi) == (0.0, 0.0) and b.passed


def test_bias_ci_width():
    b = ev.bias_test(np.random.default_rng(0).standard_normal(10000))
    assert b.ci_hi - b.ci_lo == pytest.approx(0.0392, rel=0.1)
    assert b.passed


def test_bias_shifted():
    b = ev.bias_test(np.random.default_rng(1).standard_normal(100) + 1.0)
    assert not b.passed


def test_box_stats():
    assert ev.box_stats([1, 2, 3, 4, 5]).median == 3
    b = ev.box_stats(np.full(7, 2.5))
    assert {b.median, b.q1, b.q3, b.whisker_lo, b.whisker_hi} == {2.5}
    assert b.n_outliers == 0
    b = ev.box_stats(np.random.default_rng(2).standard_normal(10000))
    assert b.whisker_lo == pytest.approx(-1.96, abs=0.08)
    assert b.whisker_hi == pytest.approx(1.96, abs=0.08)
    with pytest.raises(ValueError):
        ev.box_stats([])


def test_trajectory_metrics():
    r = _result([[1.0, 2.0], [3.0, 4.0]], np.tile(np.eye(2), (2, 1, 1)))
    m = ev.trajectory_metrics(r, np.zeros((2, 3)))
    assert m.mean_err_pos == 2.0 and m.mean_err_vel == 3.0
    assert m.rmse_pos == pytest.approx(np.sqrt(5.0))
    assert m.dof_full == 4
