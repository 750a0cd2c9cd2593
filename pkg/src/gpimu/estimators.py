"""End-to-end estimators: IMU-as-input and IMU-as-measurement."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import blocktri
from .blocktri import BlockTriDiag
from .gp_traj import MeasurementStream, Posterior, build_prior, interpolate
from .preint import (
    classic_preintegrate,
    gp_preintegrate,
    input_endpoint_graph,
    measurement_endpoint_graph,
    snap_times,
    window_grid,
    window_measurements,
)
from .priors import MotionModel, SingerParams


class Method(str, enum.Enum):
    INPUT = "input"
    MEASUREMENT = "measurement"


@dataclass(frozen=True)
class EstimatorConfig:
    method: Method
    x0_mean: np.ndarray
    p0: np.ndarray
    r_pos: float
    r_acc: float
    q_input: float | None = None
    singer: SingerParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "x0_mean", np.asarray(self.x0_mean, dtype=float))
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        if not (self.r_pos > 0 and self.r_acc > 0):
            raise ValueError("measurement variances must be positive")
        if self.method is Method.INPUT and not (self.q_input is not None and self.q_input > 0):
            raise ValueError("the input method needs a positive q_input")
        if self.method is Method.MEASUREMENT and self.singer is None:
            raise ValueError("the measurement method needs Singer parameters")

    @property
    def state_dim(self) -> int:
        return 2 if self.method is Method.INPUT else 3


@dataclass(frozen=True)
class EstimateResult:
    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    info: BlockTriDiag
    method: Method

    @property
    def state_dim(self) -> int:
        return self.means.shape[1]

    def full_cov(self) -> np.ndarray:
        """Dense joint covariance over all endpoints (evaluation only)."""
        f = blocktri.factorize(self.info)
        n, d = self.info.n_blocks, self.info.block_dim
        return blocktri.solve(f, np.eye(n * d).reshape(n, d, n * d)).reshape(n * d, n * d)

    @classmethod
    def from_posterior(cls, post: Posterior, method: Method) -> "EstimateResult":
        return cls(post.times, post.mean, post.marginal_covariances, post.info, method)


def _with_variance(meas: MeasurementStream, var: float) -> MeasurementStream:
    return MeasurementStream(meas.times, meas.c, meas.y, np.full_like(meas.r, var))


def run_input_estimator(pos: MeasurementStream, acc: MeasurementStream,
                        cfg: EstimatorConfig) -> EstimateResult:
    """Classic preintegration between position times, then the endpoint solve."""
    ends = np.unique(pos.times)
    factors = [classic_preintegrate(acc, (ends[k], ends[k + 1]), cfg.q_input)
               for k in range(ends.size - 1)]
    post = input_endpoint_graph(_with_variance(pos, cfg.r_pos), factors,
                                cfg.p0[:2, :2], cfg.x0_mean[:2])
    return EstimateResult.from_posterior(post, Method.INPUT)


def measurement_model(cfg: EstimatorConfig) -> MotionModel:
    return MotionModel.singer(cfg.singer.alpha, cfg.singer.sigma2)


def measurement_windows(pos_times, acc: MeasurementStream, model: MotionModel):
    """One joint Gaussian factor per position interval from the accelerometer samples."""
    ends = np.asarray(pos_times, dtype=float)
    windows = []
    for k in range(ends.size - 1):
        t0, t1 = ends[k], ends[k + 1]
        grid = window_grid(t0, t1, acc.times)
        # a window-local start prior keeps each solve well conditioned; it is
        # divided out again by the endpoint graph
        prior = build_prior(model, grid, np.zeros(model.dim), model.q(t1 - t0))
        meas = snap_times(window_measurements(acc, t0, t1, first=k == 0), grid)
        windows.append(gp_preintegrate(prior, meas, (t0, t1)))
    return windows


def run_measurement_estimator(pos: MeasurementStream, acc: MeasurementStream,
                              cfg: EstimatorConfig) -> EstimateResult:
    """Singer prior with accelerations as state measurements, preintegrated per window."""
    model = measurement_model(cfg)
    ends = np.unique(pos.times)
    windows = measurement_windows(ends, _with_variance(acc, cfg.r_acc), model)
    post = measurement_endpoint_graph(windows, _with_variance(pos, cfg.r_pos), cfg.x0_mean, cfg.p0)
    return EstimateResult.from_posterior(post, Method.MEASUREMENT)


def run_estimator(pos, acc, cfg: EstimatorConfig) -> EstimateResult:
    if cfg.method is Method.INPUT:
        return run_input_estimator(pos, acc, cfg)
    return run_measurement_estimator(pos, acc, cfg)


def query(result: EstimateResult, cfg: EstimatorConfig, tau: float):
    """Posterior mean and covariance between endpoints under the Singer prior.

    Acceleration samples inside the bracketing window are not re-used here;
    the query conditions only on the two endpoint estimates.
    """
    if cfg.method is not Method.MEASUREMENT:
        raise ValueError("interpolation is defined for the measurement estimator")
    prior = build_prior(measurement_model(cfg), result.times, cfg.x0_mean, cfg.p0)
    post = Posterior(result.means, result.info, blocktri.factorize(result.info), result.times)
    return interpolate(post, prior, tau)
