"""Preintegration: compressing a window of high-rate data into an endpoint factor.

Three routes reach the same endpoint posterior:

* ``classic_preintegrate`` treats accelerometer samples as inputs to a
  constant-velocity model (IMU-as-input);
* ``gp_preintegrate`` queries a window-local GP posterior at its endpoints,
  giving a joint Gaussian over the two endpoint states;
* ``schur_marginalize`` eliminates interior knots from a full-rate
  block-tridiagonal system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blocktri
from .blocktri import BlockTriDiag
from .errors import EmptyWindow, GraphMismatch, InvalidGrid
from .gp_traj import (
    LiftedPrior,
    MeasurementStream,
    Posterior,
    knot_indices,
    measurement_information,
    prior_from_transitions,
    prior_information,
    prior_information_vector,
    solve_information,
    solve_posterior,
    spd_inverse,
)

_TIME_TOL = 1e-9


@dataclass(frozen=True)
class InputPreintFactor:
    """Relative motion factor x_end = phi_window x_start + delta_x + w, w ~ N(0, sigma)."""

    t_start: float
    t_end: float
    delta_x: np.ndarray
    phi_window: np.ndarray
    sigma: np.ndarray


def _input_steps(times: np.ndarray, t0: float, t1: float) -> np.ndarray:
    """Substep endpoints tau_1..tau_J for samples in (t0, t1]."""
    if times.size == 0:
        raise EmptyWindow(f"no input samples in ({t0}, {t1}]")
    if times[-1] < t1 - _TIME_TOL:
        # zero-order hold of the last sample up to the window end
        times = np.append(times, t1)
    return times


def classic_preintegrate(accel: MeasurementStream, window, q_input: float) -> InputPreintFactor:
    """Sum substep inputs u_n with B_n = [dt^2/2, dt] through the WNOA transition.

    Sample n drives the substep that ends at its timestamp.
    """
    t0, t1 = map(float, window)
    if not t1 > t0:
        raise InvalidGrid(f"window end {t1} must follow start {t0}")
    acc = accel.between(t0 + _TIME_TOL, t1 + _TIME_TOL)
    u = acc.y[:, 0]
    taus = _input_steps(acc.times, t0, t1)
    if taus.size > u.size:
        u = np.append(u, u[-1])
    dts = np.diff(np.concatenate([[t0], taus]))
    b = np.stack([0.5 * dts**2, dts], axis=1)
    rem = t1 - taus
    # Phi(t1, tau_n) B_n for the WNOA transition [[1, s], [0, 1]]
    pb = b.copy()
    pb[:, 0] += rem * b[:, 1]
    delta_x = pb.T @ u
    sigma = q_input * (pb.T @ pb)
    phi = np.array([[1.0, t1 - t0], [0.0, 1.0]])
    return InputPreintFactor(t0, t1, delta_x, phi, 0.5 * (sigma + sigma.T))


def dead_reckon(accel: MeasurementStream, window, x_start) -> np.ndarray:
    """Propagate (p, v) substep by substep; reference for classic_preintegrate."""
    t0, t1 = map(float, window)
    acc = accel.between(t0 + _TIME_TOL, t1 + _TIME_TOL)
    u = acc.y[:, 0]
    taus = _input_steps(acc.times, t0, t1)
    if taus.size > u.size:
        u = np.append(u, u[-1])
    x = np.array(x_start, dtype=float)
    prev = t0
    for tau, un in zip(taus, u):
        dt = tau - prev
        x = np.array([x[0] + dt * x[1] + 0.5 * dt**2 * un, x[1] + dt * un])
        prev = tau
    return x


def _endpoint_times(starts, ends) -> np.ndarray:
    starts, ends = np.asarray(starts, dtype=float), np.asarray(ends, dtype=float)
    if starts.size == 0:
        raise GraphMismatch("at least one window is required")
    gaps = starts[1:] - ends[:-1]
    if np.any(np.abs(gaps) > _TIME_TOL * max(1.0, float(np.max(np.abs(ends))))):
        raise GraphMismatch("consecutive windows must share endpoints without gaps or overlaps")
    if np.any(ends <= starts):
        raise GraphMismatch("window end must follow its start")
    return np.concatenate([starts, ends[-1:]])


def _as_width(meas: MeasurementStream, dim: int) -> MeasurementStream:
    return meas.truncate_state(dim) if meas.state_dim > dim else meas


def input_endpoint_graph(pos_meas: MeasurementStream, factors, p0, x0) -> Posterior:
    """Endpoint posterior for the IMU-as-input objective.

    Each factor becomes a prior interval whose mean is shifted by delta_x.
    """
    factors = list(factors)
    times = _endpoint_times([f.t_start for f in factors], [f.t_end for f in factors])
    prior = prior_from_transitions(times, [f.phi_window for f in factors],
                                   [f.sigma for f in factors], x0, p0,
                                   offsets=[f.delta_x for f in factors])
    return solve_posterior(prior, _as_width(pos_meas, prior.dim))


@dataclass(frozen=True)
class JointGaussianFactor:
    """Joint Gaussian over (x_start, x_end) from a window posterior.

    ``start_mean``/``start_cov`` is the window-local prior placed on x_start
    to make the window well posed. It is divided out again when the factor
    enters an endpoint graph.
    """

    t_start: float
    t_end: float
    x_tilde: np.ndarray
    p_tilde: np.ndarray
    start_mean: np.ndarray
    start_cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.x_tilde.shape[1]

    def likelihood_information(self):
        """Information matrix (2D x 2D) and vector of the window data alone."""
        d = self.dim
        lam = spd_inverse(self.p_tilde)
        eta = lam @ self.x_tilde.reshape(-1)
        s_inv = spd_inverse(self.start_cov)
        lam[:d, :d] -= s_inv
        eta[:d] -= s_inv @ self.start_mean
        return 0.5 * (lam + lam.T), eta


def gp_preintegrate(prior: LiftedPrior, meas: MeasurementStream, endpoints=None) -> JointGaussianFactor:
    """Posterior GP query at the first and last window knots.

    x_tilde = x_prior_E + [H^{-1} C^T R^{-1} (y - C x_prior)]_E and
    P_tilde = [H^{-1}]_EE with H = P_prior^{-1} + C^T R^{-1} C, found with
    one block-tridiagonal factorization and a solve against the two
    endpoint block columns.
    """
    times = prior.times
    if times.size < 2:
        raise EmptyWindow("a window needs at least two knots")
    if endpoints is not None:
        t0, t1 = map(float, endpoints)
        if abs(times[0] - t0) > _TIME_TOL or abs(times[-1] - t1) > _TIME_TOL:
            raise InvalidGrid("window endpoints must be the first and last knots")
    d, n = prior.dim, prior.n_knots
    info = prior_information(prior)
    hdiag, hrhs = measurement_information(times, d, meas)
    info = BlockTriDiag(info.diag + hdiag, info.off)
    factor = blocktri.factorize(info)
    rhs = np.zeros((n, d, 2 * d + 1))
    rhs[0, :, :d] = np.eye(d)
    rhs[-1, :, d:2 * d] = np.eye(d)
    if len(meas):
        idx = knot_indices(times, meas.times)
        resid = meas.y - np.einsum("nij,nj->ni", meas.c, prior.means[idx])
        rinv = spd_inverse(meas.r)
        np.add.at(rhs[:, :, -1], idx, np.einsum("nji,njk,nk->ni", meas.c, rinv, resid))
    sol = blocktri.solve(factor, rhs)
    x_tilde = prior.means[[0, -1]] + sol[[0, -1], :, -1]
    cols = sol[[0, -1], :, :2 * d].reshape(2 * d, 2 * d)
    p_tilde = 0.5 * (cols + cols.T)
    return JointGaussianFactor(float(times[0]), float(times[-1]), x_tilde, p_tilde,
                               prior.x0_mean.copy(), prior.p0.copy())


def measurement_endpoint_graph(windows, pos_meas: MeasurementStream, x0_mean, p0) -> Posterior:
    """Endpoint posterior from joint window factors, position factors and the head prior."""
    windows = list(windows)
    times = _endpoint_times([w.t_start for w in windows], [w.t_end for w in windows])
    d = windows[0].dim
    n = times.size
    diag = np.zeros((n, d, d))
    off = np.zeros((n - 1, d, d))
    rhs = np.zeros((n, d))
    for k, w in enumerate(windows):
        lam, eta = w.likelihood_information()
        diag[k] += lam[:d, :d]
        diag[k + 1] += lam[d:, d:]
        off[k] += lam[d:, :d]
        rhs[k] += eta[:d]
        rhs[k + 1] += eta[d:]
    p0_inv = spd_inverse(np.asarray(p0, dtype=float))
    diag[0] += p0_inv
    rhs[0] += p0_inv @ np.asarray(x0_mean, dtype=float)
    hdiag, hrhs = measurement_information(times, d, _as_width(pos_meas, d))
    diag += hdiag
    rhs += hrhs
    diag = 0.5 * (diag + np.swapaxes(diag, 1, 2))
    return solve_information(BlockTriDiag(diag, off), rhs, times)


@dataclass(frozen=True)
class ReducedSystem:
    kept_indices: np.ndarray
    l_small: BlockTriDiag
    r_small: np.ndarray

    def solve(self) -> Posterior:
        return solve_information(self.l_small, self.r_small)


def schur_marginalize(l: BlockTriDiag, r: np.ndarray, keep) -> ReducedSystem:
    """Eliminate every index not in ``keep`` from L x = r.

    Each run of eliminated indices between two kept ones couples only to its
    two neighbours, so one block-tridiagonal solve per run yields the Schur
    update and the reduced system stays block-tridiagonal.
    """
    n, d = l.n_blocks, l.block_dim
    keep = np.asarray(keep, dtype=int)
    if keep.size == 0 or np.any(np.diff(keep) <= 0) or keep[0] < 0 or keep[-1] >= n:
        raise InvalidGrid("keep must be a nonempty, sorted set of valid indices")
    r = np.asarray(r, dtype=float)
    m = keep.size
    pos = {int(k): i for i, k in enumerate(keep)}
    ldiag = l.diag[keep].copy()
    loff = np.zeros((max(m - 1, 0), d, d))
    rs = r[keep].copy()
    for i in range(m - 1):
        if keep[i + 1] == keep[i] + 1:
            loff[i] = l.off[keep[i]]

    bounds = np.concatenate([[-1], keep, [n]])
    for left, right in zip(bounds[:-1], bounds[1:]):
        a, b = left + 1, right - 1
        if a > b:
            continue
        seg = BlockTriDiag(l.diag[a:b + 1], l.off[a:b])
        f = blocktri.factorize(seg)
        ns = b - a + 1
        rhs = np.zeros((ns, d, 2 * d + 1))
        if left >= 0:
            rhs[0, :, :d] = l.off[a - 1]
        if right < n:
            rhs[-1, :, d:2 * d] = l.off[b].T
        rhs[:, :, -1] = r[a:b + 1]
        g = blocktri.solve(f, rhs)
        g_left, g_right, g_r = g[:, :, :d], g[:, :, d:2 * d], g[:, :, -1]
        if left >= 0:
            i = pos[int(left)]
            ldiag[i] -= l.off[a - 1].T @ g_left[0]
            rs[i] -= l.off[a - 1].T @ g_r[0]
        if right < n:
            j = pos[int(right)]
            ldiag[j] -= l.off[b] @ g_right[-1]
            rs[j] -= l.off[b] @ g_r[-1]
            if left >= 0:
                loff[j - 1] -= l.off[b] @ g_left[-1]
    ldiag = 0.5 * (ldiag + np.swapaxes(ldiag, 1, 2))
    return ReducedSystem(keep, BlockTriDiag(ldiag, loff), rs)


def full_system(prior: LiftedPrior, meas: MeasurementStream):
    """Information matrix and vector of the full-rate batch problem."""
    info = prior_information(prior)
    rhs = prior_information_vector(prior)
    hdiag, hrhs = measurement_information(prior.times, prior.dim, meas)
    return BlockTriDiag(info.diag + hdiag, info.off), rhs + hrhs


def window_grid(t0: float, t1: float, sample_times: np.ndarray) -> np.ndarray:
    """Knots of a window: its endpoints plus any sample times strictly inside."""
    inside = sample_times[(sample_times > t0 + _TIME_TOL) & (sample_times < t1 - _TIME_TOL)]
    return np.concatenate([[t0], inside, [t1]])


def window_measurements(meas: MeasurementStream, t0: float, t1: float, first: bool) -> MeasurementStream:
    """Samples owned by a window: (t0, t1], plus t0 for the first window."""
    return meas.between(t0 - _TIME_TOL if first else t0 + _TIME_TOL, t1 + _TIME_TOL, include_start=first)


def snap_times(meas: MeasurementStream, grid: np.ndarray) -> MeasurementStream:
    """Replace measurement times by the coinciding grid times."""
    if len(meas) == 0:
        return meas
    idx = knot_indices(grid, meas.times)
    return MeasurementStream(grid[idx], meas.c, meas.y, meas.r)


__all__ = [
    "InputPreintFactor", "JointGaussianFactor", "ReducedSystem",
    "classic_preintegrate", "dead_reckon", "input_endpoint_graph",
    "gp_preintegrate", "measurement_endpoint_graph", "schur_marginalize",
    "full_system", "window_grid", "window_measurements", "snap_times",
]
