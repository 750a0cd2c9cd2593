"""Hyperparameter training for both estimators.

* IMU-as-input: maximum-likelihood scalar input covariance q, with the window
  covariance Sigma_k = q S_k.
* IMU-as-measurement: Singer (alpha, sigma2) by gradient descent on ln alpha
  with analytic gradients, either from noiseless states (sigma2 in closed
  form every iteration) or from noisy ground truth with known covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import blocktri
from .blocktri import BlockTriDiag
from .errors import DegenerateData, NonFiniteObjective
from .gp_traj import spd_inverse
from .preint import classic_preintegrate
from .priors import SingerParams, q_alpha_jacobian, singer_phi, singer_q

ARMIJO_C = 1e-4
MAX_ITER = 500
GRAD_TOL = 1e-6
Q_BOUNDS = (1e-8, 1e2)


@dataclass
class TrainReport:
    params: dict
    objective: float
    iterations: int
    grad_norm: float
    converged: bool
    trace: list = field(default_factory=list)


def finite_difference_gradient(objective: Callable, params, step=1e-6) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    x = np.atleast_1d(np.asarray(params, dtype=float))
    steps = np.broadcast_to(np.asarray(step, dtype=float), x.shape)
    grad = np.empty_like(x)
    for i in range(x.size):
        hi, lo = x.copy(), x.copy()
        hi[i] += steps[i]
        lo[i] -= steps[i]
        grad[i] = (objective(hi) - objective(lo)) / (2.0 * steps[i])
    return grad


def _logdet_spd(m: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(m)
    return 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)


# ----------------------------------------------------------- IMU-as-input


def input_window_errors(times, states, acc_meas, endpoint_times):
    """Per-window e_k = x_k - Phi x_{k-1} - dx_k on (p, v) and the unit covariances S_k."""
    idx = np.searchsorted(times, endpoint_times)
    idx = np.clip(idx, 0, times.size - 1)
    if np.any(np.abs(times[idx] - endpoint_times) > 1e-9):
        raise DegenerateData("ground truth is missing endpoint states")
    x = states[idx, :2]
    errs, covs = [], []
    for k in range(endpoint_times.size - 1):
        f = classic_preintegrate(acc_meas, (endpoint_times[k], endpoint_times[k + 1]), 1.0)
        errs.append(x[k + 1] - f.phi_window @ x[k] - f.delta_x)
        covs.append(f.sigma)
    return np.array(errs).reshape(-1, 2), np.array(covs).reshape(-1, 2, 2)


def input_objective(q: float, quads: np.ndarray, logdets: np.ndarray, counts: np.ndarray,
                    head: float = 0.0) -> float:
    """Average over trajectories of 1/2 ln|P| + 1/2 (x - x_prior)^T P^{-1} (x - x_prior).

    ``quads[t]`` is sum_k e^T S_k^{-1} e, ``logdets[t]`` sum_k ln|S_k| and
    ``counts[t]`` the number of error components; ``head`` holds the
    q-independent initial-state terms.
    """
    per_traj = 0.5 * (counts * np.log(q) + logdets + quads / q)
    return float(np.mean(per_traj) + head)


def train_input_covariance(trajs: Sequence, endpoint_times, x0_mean=None, p0=None) -> TrainReport:
    """Maximum-likelihood q_input from noiseless ground truth and measured inputs.

    Each item of ``trajs`` needs ``times``, ``states`` and ``acc_meas``.
    """
    endpoint_times = np.asarray(endpoint_times, dtype=float)
    quads, logdets, counts = [], [], []
    head = 0.0
    for tr in trajs:
        e, s = input_window_errors(tr.times, tr.states, tr.acc_meas, endpoint_times)
        s_inv = spd_inverse(s)
        quads.append(float(np.einsum("ki,kij,kj->", e, s_inv, e)))
        logdets.append(float(np.sum(_logdet_spd(s))))
        counts.append(e.size)
        if x0_mean is not None and p0 is not None:
            e0 = tr.states[0, :2] - np.asarray(x0_mean)[:2]
            p0_2 = np.asarray(p0)[:2, :2]
            head += 0.5 * (e0 @ np.linalg.solve(p0_2, e0) + _logdet_spd(p0_2)) / len(trajs)
    quads, logdets, counts = map(np.asarray, (quads, logdets, counts))
    if quads.size == 0 or not np.any(quads > 0):
        raise DegenerateData("all motion errors are zero; q_input is not identifiable")

    def f(log_q):
        return input_objective(np.exp(log_q), quads, logdets, counts, head)

    res = minimize_scalar(f, bounds=tuple(np.log(Q_BOUNDS)), method="bounded",
                          options={"xatol": 1e-10})
    q = float(np.exp(res.x))
    closed = float(quads.sum() / counts.sum())
    return TrainReport({"q_input": q, "q_closed_form": closed}, float(res.fun), int(res.nfev),
                       0.0, bool(res.success))


# ------------------------------------------------------- Singer, noiseless


@dataclass(frozen=True)
class IntervalData:
    """Stacked consecutive ground-truth pairs for one axis."""

    dts: np.ndarray
    prev: np.ndarray
    next: np.ndarray

    @property
    def n(self) -> int:
        return self.dts.size


def collect_intervals(trajs: Sequence, axis: int = 0, n_axes: int = 1) -> IntervalData:
    """Consecutive (x_{k-1}, x_k) pairs of one axis from (times, states) trajectories."""
    dts, prev, nxt = [], [], []
    cols = np.arange(3) * n_axes + axis
    for tr in trajs:
        times, states = (tr.times, tr.states) if hasattr(tr, "times") else tr
        x = np.asarray(states, dtype=float)[:, cols]
        dts.append(np.diff(times))
        prev.append(x[:-1])
        nxt.append(x[1:])
    return IntervalData(np.concatenate(dts), np.concatenate(prev), np.concatenate(nxt))


def _motion_terms(data: IntervalData, alpha: float):
    phi = singer_phi(data.dts, alpha)
    q = singer_q(data.dts, alpha, 1.0)
    e = data.next - np.einsum("kij,kj->ki", phi, data.prev)
    q_inv = spd_inverse(q)
    qe = np.einsum("kij,kj->ki", q_inv, e)
    return e, q, q_inv, qe


def singer_objective(data: IntervalData, alpha: float, sigma2: float, with_grad: bool = True):
    """J = 1/2 sum_k (e_k^T Q_k^{-1} e_k + ln|Q_k|) with Q_k = sigma2 Q(dt_k, alpha).

    Returns ``(J, dJ/dalpha, dJ/dsigma2)``.
    """
    e, q, q_inv, qe = _motion_terms(data, alpha)
    quad = np.einsum("ki,ki->k", e, qe)
    j = 0.5 * float(np.sum(quad / sigma2 + 3.0 * np.log(sigma2) + _logdet_spd(q)))
    if not np.isfinite(j):
        raise NonFiniteObjective(f"objective is not finite at alpha={alpha}, sigma2={sigma2}")
    if not with_grad:
        return j, None, None
    dq, dphi = q_alpha_jacobian(data.dts, alpha)
    de = -np.einsum("kij,kj->ki", dphi, data.prev)
    g_alpha = 0.5 * float(np.sum(
        2.0 * np.einsum("ki,ki->k", qe, de) / sigma2
        - np.einsum("ki,kij,kj->k", qe, dq, qe) / sigma2
        + np.einsum("kij,kji->k", q_inv, dq)))
    g_sigma2 = 1.5 * data.n / sigma2 - 0.5 * float(np.sum(quad)) / sigma2**2
    return j, g_alpha, g_sigma2


def optimal_sigma2(data: IntervalData, alpha: float) -> float:
    """Closed-form minimizer of J over sigma2 for fixed alpha."""
    e, _, _, qe = _motion_terms(data, alpha)
    return float(np.sum(e * qe)) / (3.0 * data.n)


def _descend(f_and_grad, theta0, max_iter=MAX_ITER, tol=GRAD_TOL, on_accept=None):
    """Gradient descent with Armijo backtracking and an adaptive step."""
    theta = np.atleast_1d(np.asarray(theta0, dtype=float)).copy()
    f, g = f_and_grad(theta)
    step = 1.0
    trace = [(0, f, *theta)]
    converged = False
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            converged = True
            break
        accepted = False
        for _ in range(60):
            cand = theta - step * g
            try:
                f_new, g_new = f_and_grad(cand)
            except (NonFiniteObjective, np.linalg.LinAlgError, ArithmeticError):
                step *= 0.5
                continue
            if np.isfinite(f_new) and f_new <= f - ARMIJO_C * step * gnorm**2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        theta, f, g = cand, f_new, g_new
        trace.append((it, f, *theta))
        if on_accept is not None:
            on_accept(theta)
        step *= 2.0
    return theta, f, g, len(trace) - 1, converged, trace


def _fit_singer_axis(data: IntervalData, alpha0: float, max_iter: int, tol: float):
    n = data.n

    def profiled(theta):
        alpha = float(np.exp(theta[0]))
        s2 = optimal_sigma2(data, alpha)
        j, ga, _ = singer_objective(data, alpha, s2)
        return j / n, np.array([ga * alpha / n])

    theta, f, g, it, conv, trace = _descend(profiled, [np.log(alpha0)], max_iter, tol)
    alpha = float(np.exp(theta[0]))
    return alpha, optimal_sigma2(data, alpha), f * n, float(np.linalg.norm(g)), it, conv, trace


def train_singer_noiseless(trajs: Sequence, init: SingerParams, max_iter: int = MAX_ITER,
                           tol: float = GRAD_TOL) -> TrainReport:
    """Learn per-axis (alpha, sigma2) from noiseless ground-truth states on a grid.

    The objective is normalized by the number of intervals during descent so
    that ``tol`` does not depend on the size of the training set.
    """
    alphas, sigmas, objective, gnorm, iters, conv, trace = [], [], 0.0, 0.0, 0, True, []
    for axis in range(init.n_axes):
        data = collect_intervals(trajs, axis, init.n_axes)
        if data.n == 0:
            raise DegenerateData("training set has no intervals")
        a0 = max(float(init.alpha[axis]), 1e-6)
        a, s2, j, gn, it, cv, tr = _fit_singer_axis(data, a0, max_iter, tol)
        alphas.append(a)
        sigmas.append(s2)
        objective += j
        gnorm = max(gnorm, gn)
        iters = max(iters, it)
        conv = conv and cv
        trace.extend((axis,) + row for row in tr)
    return TrainReport({"alpha": alphas, "sigma2": sigmas}, objective, iters, gnorm, conv, trace)


# --------------------------------------------------- Singer, noisy ground truth


@dataclass(frozen=True)
class NoisyTrack:
    """Ground-truth observations y_k = x_k + n_k, n_k ~ N(0, r[k]), for one axis."""

    times: np.ndarray
    y: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(times.size, 3)
        r = np.broadcast_to(np.asarray(self.r, dtype=float), (times.size, 3, 3)).copy()
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "r", r)


def _noisy_blocks(track: NoisyTrack, alpha: float, sigma2: float):
    dts = np.diff(track.times)
    phi = singer_phi(dts, alpha)
    q = singer_q(dts, alpha, 1.0)
    r = track.r
    diag = r[1:] + phi @ r[:-1] @ np.swapaxes(phi, 1, 2) + sigma2 * q
    off = -phi[1:] @ r[1:-1]
    e = track.y[1:] - np.einsum("kij,kj->ki", phi, track.y[:-1])
    return dts, phi, q, BlockTriDiag(0.5 * (diag + np.swapaxes(diag, 1, 2)), off), e


def noisy_objective(tracks: Sequence[NoisyTrack], alpha: float, sigma2: float,
                    with_grad: bool = True):
    """Whole-trajectory NLL 1/2 e^T S^{-1} e + 1/2 ln|S| (constants dropped).

    S is block-tridiagonal; the trace in the gradient uses only its
    block-tridiagonal inverse entries. Returns ``(J, dJ/dalpha, dJ/dsigma2)``.
    """
    j = ga = gs = 0.0
    for tr in tracks:
        dts, phi, q, cov, e = _noisy_blocks(tr, alpha, sigma2)
        f = blocktri.factorize(cov)
        w = blocktri.solve(f, e)
        j += 0.5 * float(np.sum(e * w)) + 0.5 * blocktri.log_det(f)
        if not with_grad:
            continue
        s = blocktri.partial_inverse(f)
        dq, dphi = q_alpha_jacobian(dts, alpha)
        r = tr.r
        prod = dphi @ r[:-1] @ np.swapaxes(phi, 1, 2)
        d_diag = prod + np.swapaxes(prod, 1, 2) + sigma2 * dq
        d_off = -dphi[1:] @ r[1:-1]
        de = -np.einsum("kij,kj->ki", dphi, tr.y[:-1])
        ga += _gradient_term(s, w, d_diag, d_off, de)
        gs += _gradient_term(s, w, q, np.zeros_like(d_off), None)
    if not np.isfinite(j):
        raise NonFiniteObjective(f"objective is not finite at alpha={alpha}, sigma2={sigma2}")
    return j, ga, gs


def _gradient_term(s: BlockTriDiag, w, d_diag, d_off, de) -> float:
    """-1/2 w^T dS w + w^T de + 1/2 tr(S^{-1} dS) for block-tridiagonal dS."""
    quad = np.einsum("ki,kij,kj->", w, d_diag, w) + 2.0 * np.einsum("ki,kij,kj->", w[1:], d_off, w[:-1])
    trace = np.sum(s.diag * d_diag) + 2.0 * np.sum(s.off * d_off)
    out = -0.5 * quad + 0.5 * trace
    if de is not None:
        out += float(np.sum(w * de))
    return float(out)


def noisy_tracks(trajs: Sequence, r_gt, axis: int = 0, n_axes: int = 1) -> list[NoisyTrack]:
    """One-axis tracks from trajectories carrying noisy ground truth ``states``."""
    cols = np.arange(3) * n_axes + axis
    return [NoisyTrack(tr.times, np.asarray(tr.states)[:, cols], r_gt) for tr in trajs]


def train_singer_noisy_gt(tracks_per_axis: Sequence[Sequence[NoisyTrack]], init: SingerParams,
                          max_iter: int = MAX_ITER, tol: float = GRAD_TOL) -> TrainReport:
    """Learn per-axis (alpha, sigma2) from noisy ground truth with fixed covariance."""
    alphas, sigmas, objective, gnorm, iters, conv, trace = [], [], 0.0, 0.0, 0, True, []
    for axis, tracks in enumerate(tracks_per_axis):
        n = sum(t.times.size - 1 for t in tracks)
        if n == 0:
            raise DegenerateData("training set has no intervals")

        def fg(theta, tracks=tracks, n=n):
            a, s2 = np.exp(theta)
            j, ga, gs = noisy_objective(tracks, a, s2)
            return j / n, np.array([ga * a, gs * s2]) / n

        theta0 = np.log([max(float(init.alpha[axis]), 1e-6), float(init.sigma2[axis])])
        theta, f, g, it, cv, tr = _descend(fg, theta0, max_iter, tol)
        alphas.append(float(np.exp(theta[0])))
        sigmas.append(float(np.exp(theta[1])))
        objective += f * n
        gnorm = max(gnorm, float(np.linalg.norm(g)))
        iters = max(iters, it)
        conv = conv and cv
        trace.extend((axis,) + row for row in tr)
    return TrainReport({"alpha": alphas, "sigma2": sigmas}, objective, iters, gnorm, conv, trace)
