"""Error statistics, NEES, chi-squared bounds, bias tests and box-plot summaries."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import bisect
from scipy.special import gammainc
from scipy.stats import norm

from . import blocktri
from .errors import NotPositiveDefinite, SingularCovariance


@dataclass(frozen=True)
class TrajectoryMetrics:
    mean_err_pos: float
    mean_err_vel: float
    rmse_pos: float
    rmse_vel: float
    nees_marginal: float
    nees_full: float
    dof_marginal: int
    dof_full: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: np.ndarray
    mean: float

    @property
    def n_outliers(self) -> int:
        return int(self.outliers.size)


@dataclass(frozen=True)
class BiasTest:
    ci_lo: float
    ci_hi: float
    mean: float
    passed: bool
    whiskers_inside: bool


def _errors(result, truth) -> np.ndarray:
    truth = np.asarray(truth, dtype=float)
    d = result.state_dim
    if truth.shape[0] != result.means.shape[0] or truth.shape[1] < d:
        raise ValueError(f"truth shape {truth.shape} does not match the estimate")
    return result.means - truth[:, :d]


def nees_marginal(result, truth, dims: int = 2):
    """Per-knot NEES on the leading ``dims`` components, averaged over knots and dof."""
    e = _errors(result, truth)[:, :dims]
    p = result.covs[:, :dims, :dims]
    try:
        chol = np.linalg.cholesky(p)
    except np.linalg.LinAlgError:
        raise SingularCovariance("a marginal covariance block is singular") from None
    z = np.linalg.solve(chol, e[..., None])[..., 0]
    dof = e.size
    return float(np.sum(z**2)) / dof, dof


def nees_full(result, truth):
    """e^T P^{-1} e / dof over the whole stacked endpoint state.

    The information matrix is the inverse covariance, so no dense inverse is formed.
    """
    e = _errors(result, truth)
    try:
        blocktri.factorize(result.info)
    except NotPositiveDefinite:
        raise SingularCovariance("endpoint covariance is singular") from None
    dof = e.size
    return float(np.sum(e * result.info.matvec(e))) / dof, dof


def trajectory_metrics(result, truth) -> TrajectoryMetrics:
    e = _errors(result, truth)
    nm, dm = nees_marginal(result, truth)
    nf, df = nees_full(result, truth)
    return TrajectoryMetrics(
        float(np.mean(e[:, 0])), float(np.mean(e[:, 1])),
        float(np.sqrt(np.mean(e[:, 0] ** 2))), float(np.sqrt(np.mean(e[:, 1] ** 2))),
        nm, nf, dm, df)


def chi2_bound(p: float, dof: int, tol: float = 1e-9) -> float:
    """Inverse chi-squared CDF by bisection on the regularized lower incomplete gamma."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if dof < 1:
        raise ValueError("dof must be at least 1")
    k = 0.5 * dof

    def cdf_gap(x):
        return gammainc(k, 0.5 * x) - p

    hi = max(1.0, float(dof))
    while cdf_gap(hi) < 0.0:
        hi *= 2.0
    return float(bisect(cdf_gap, 0.0, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))


def nees_band(dof: int, level: float = 0.95, n: int = 1) -> tuple[float, float]:
    """Two-sided band for the mean of n per-trajectory NEES values (each divided by dof)."""
    tail = 0.5 * (1.0 - level)
    total = dof * n
    return chi2_bound(tail, total) / total, chi2_bound(1.0 - tail, total) / total


def box_stats(values) -> BoxStats:
    """Quartiles and 2.5/97.5 percent whiskers with linear interpolation."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("box_stats needs at least one value")
    lo, q1, med, q3, hi = np.percentile(v, [2.5, 25.0, 50.0, 75.0, 97.5])
    outliers = v[(v < lo) | (v > hi)]
    return BoxStats(float(med), float(q1), float(q3), float(lo), float(hi), outliers, float(np.mean(v)))


def bias_test(per_traj_means, level: float = 0.95) -> BiasTest:
    """Normal-approximation CI for the mean; passes when the CI contains zero.

    ``whiskers_inside`` additionally reports whether the 2.5/97.5 percent
    whiskers of the per-trajectory values fall inside the interval.
    """
    v = np.asarray(per_traj_means, dtype=float).ravel()
    if v.size < 2:
        raise ValueError("bias_test needs at least two values")
    mean = float(np.mean(v))
    half = float(norm.ppf(0.5 + 0.5 * level)) * float(np.std(v, ddof=1)) / np.sqrt(v.size)
    lo, hi = mean - half, mean + half
    box = box_stats(v)
    return BiasTest(lo, hi, mean, bool(lo <= 0.0 <= hi),
                    bool(lo <= box.whisker_lo and box.whisker_hi <= hi))
