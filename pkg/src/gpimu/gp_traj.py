"""Exactly sparse GP regression over a knot grid.

The lifted prior x ~ N(A v, A Q A^T) has a block-tridiagonal inverse kernel,
so the batch posterior costs O(K) and interpolation at any time needs only
the two bracketing knots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import blocktri
from .blocktri import BlockCholesky, BlockTriDiag
from .errors import InvalidGrid, MeasurementOffGrid, NotPositiveDefinite, OutOfSpan
from .priors import MotionModel


def spd_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse of a stack of SPD matrices via Cholesky."""
    m = np.asarray(m, dtype=float)
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("covariance block is not positive definite") from None
    eye = np.broadcast_to(np.eye(m.shape[-1]), m.shape)
    linv = np.linalg.solve(chol, eye)
    inv = np.swapaxes(linv, -1, -2) @ linv
    return 0.5 * (inv + np.swapaxes(inv, -1, -2))


@dataclass(frozen=True)
class MeasurementStream:
    """Unary linear measurements y = C x(t) + n, n ~ N(0, R)."""

    times: np.ndarray
    c: np.ndarray
    y: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        n = times.size
        c = np.asarray(self.c, dtype=float)
        c = c.reshape(n, -1, c.shape[-1]) if n else c.reshape(0, 1, c.shape[-1] if c.ndim else 1)
        m = c.shape[1]
        y = np.asarray(self.y, dtype=float).reshape(n, m)
        r = np.asarray(self.r, dtype=float).reshape(n, m, m)
        for name, val in (("times", times), ("c", c), ("y", y), ("r", r)):
            object.__setattr__(self, name, val)

    @classmethod
    def scalar(cls, times, values, row, variance) -> "MeasurementStream":
        """One scalar channel ``y = row . x + n`` with a fixed variance."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        n = times.size
        row = np.asarray(row, dtype=float)
        c = np.broadcast_to(row, (n, 1, row.size)).copy()
        r = np.full((n, 1, 1), float(variance))
        return cls(times, c, np.asarray(values, dtype=float).reshape(n, 1), r)

    @classmethod
    def empty(cls, state_dim: int, meas_dim: int = 1) -> "MeasurementStream":
        return cls(np.zeros(0), np.zeros((0, meas_dim, state_dim)), np.zeros((0, meas_dim)),
                   np.zeros((0, meas_dim, meas_dim)))

    def __len__(self) -> int:
        return self.times.size

    @property
    def state_dim(self) -> int:
        return self.c.shape[-1]

    def select(self, mask) -> "MeasurementStream":
        return MeasurementStream(self.times[mask], self.c[mask], self.y[mask], self.r[mask])

    def between(self, t0: float, t1: float, include_start: bool = False) -> "MeasurementStream":
        """Measurements with t0 < t <= t1 (or t0 <= t <= t1)."""
        lo = self.times >= t0 if include_start else self.times > t0
        return self.select(lo & (self.times <= t1))

    def truncate_state(self, dim: int) -> "MeasurementStream":
        """Drop trailing state columns of C; they must be zero."""
        if np.any(self.c[..., dim:] != 0):
            raise ValueError(f"measurement rows touch state components beyond {dim}")
        return MeasurementStream(self.times, self.c[..., :dim], self.y, self.r)

    @staticmethod
    def concat(streams) -> "MeasurementStream":
        streams = list(streams)
        out = MeasurementStream(np.concatenate([s.times for s in streams]),
                                np.concatenate([s.c for s in streams]),
                                np.concatenate([s.y for s in streams]),
                                np.concatenate([s.r for s in streams]))
        return out.select(np.argsort(out.times, kind="stable"))


@dataclass(frozen=True)
class LiftedPrior:
    """GP prior on a knot grid.

    ``phis[k]``/``qs[k]`` describe the interval from knot k to k+1 and
    ``offsets[k]`` is the exogenous mean increment over that interval, so
    x_{k+1} = Phi_k x_k + offsets[k] + w_k.
    """

    times: np.ndarray
    phis: np.ndarray
    qs: np.ndarray
    x0_mean: np.ndarray
    p0: np.ndarray
    model: MotionModel | None = None
    offsets: np.ndarray | None = None

    @property
    def n_knots(self) -> int:
        return self.times.size

    @property
    def dim(self) -> int:
        return self.x0_mean.size

    @cached_property
    def means(self) -> np.ndarray:
        out = np.empty((self.n_knots, self.dim))
        out[0] = self.x0_mean
        for k in range(self.n_knots - 1):
            out[k + 1] = self.phis[k] @ out[k]
            if self.offsets is not None:
                out[k + 1] += self.offsets[k]
        return out

    @cached_property
    def q_inverses(self) -> np.ndarray:
        return spd_inverse(self.qs) if self.n_knots > 1 else np.zeros((0, self.dim, self.dim))


def build_prior(model: MotionModel, times, x0_mean, p0, offsets=None) -> LiftedPrior:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.ndim != 1 or times.size == 0:
        raise InvalidGrid("knot times must be a non-empty 1-D sequence")
    dts = np.diff(times)
    if np.any(~(dts > 0)):
        raise InvalidGrid("knot times must be strictly increasing")
    x0_mean = np.asarray(x0_mean, dtype=float).reshape(-1)
    p0 = np.asarray(p0, dtype=float)
    d = model.dim
    if x0_mean.size != d or p0.shape != (d, d):
        raise InvalidGrid(f"initial prior must have dimension {d}")
    if dts.size:
        phis, qs = model.phi_q(dts)
    else:
        phis, qs = np.zeros((0, d, d)), np.zeros((0, d, d))
    if offsets is not None:
        offsets = np.asarray(offsets, dtype=float).reshape(dts.size, d)
    return LiftedPrior(times, phis, qs, x0_mean, p0, model, offsets)


def prior_from_transitions(times, phis, qs, x0_mean, p0, offsets=None) -> LiftedPrior:
    """Lifted prior from explicit per-interval blocks (no continuous model)."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(~(np.diff(times) > 0)):
        raise InvalidGrid("knot times must be strictly increasing")
    x0_mean = np.asarray(x0_mean, dtype=float).reshape(-1)
    d = x0_mean.size
    phis = np.asarray(phis, dtype=float).reshape(-1, d, d)
    qs = np.asarray(qs, dtype=float).reshape(-1, d, d)
    if phis.shape[0] != times.size - 1 or qs.shape[0] != times.size - 1:
        raise InvalidGrid("need one transition per interval")
    if offsets is not None:
        offsets = np.asarray(offsets, dtype=float).reshape(-1, d)
    return LiftedPrior(times, phis, qs, x0_mean, np.asarray(p0, dtype=float), None, offsets)


def prior_information(p: LiftedPrior) -> BlockTriDiag:
    """P^{-1} = A^{-T} Q^{-1} A^{-1} assembled blockwise."""
    qinv = p.q_inverses
    diag = np.empty((p.n_knots, p.dim, p.dim))
    diag[0] = spd_inverse(p.p0)
    diag[1:] = qinv
    off = -qinv @ p.phis
    diag[:-1] += np.swapaxes(p.phis, 1, 2) @ qinv @ p.phis
    return BlockTriDiag(0.5 * (diag + np.swapaxes(diag, 1, 2)), off)


def prior_information_vector(p: LiftedPrior) -> np.ndarray:
    """P^{-1} x_prior = A^{-T} Q^{-1} v, with v = (x0, offsets)."""
    out = np.zeros((p.n_knots, p.dim))
    out[0] = spd_inverse(p.p0) @ p.x0_mean
    if p.offsets is not None and p.n_knots > 1:
        w = np.einsum("kij,kj->ki", p.q_inverses, p.offsets)
        out[1:] += w
        out[:-1] -= np.einsum("kji,kj->ki", p.phis, w)
    return out


def knot_indices(times: np.ndarray, query: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Index of the knot coinciding with each query time."""
    query = np.atleast_1d(np.asarray(query, dtype=float))
    if query.size == 0:
        return np.zeros(0, dtype=int)
    scale = max(1.0, float(np.max(np.abs(times))))
    idx = np.clip(np.searchsorted(times, query), 0, times.size - 1)
    lower = np.clip(idx - 1, 0, times.size - 1)
    idx = np.where(np.abs(times[lower] - query) < np.abs(times[idx] - query), lower, idx)
    bad = np.abs(times[idx] - query) > rtol * scale
    if np.any(bad):
        raise MeasurementOffGrid(f"measurement times {query[bad][:5]} do not coincide with knots")
    return idx


def measurement_information(times: np.ndarray, dim: int, meas: MeasurementStream):
    """Block-diagonal C^T R^{-1} C and the vector C^T R^{-1} y per knot."""
    hdiag = np.zeros((times.size, dim, dim))
    rhs = np.zeros((times.size, dim))
    if len(meas) == 0:
        return hdiag, rhs
    if meas.state_dim != dim:
        raise MeasurementOffGrid(f"measurement rows have width {meas.state_dim}, state has {dim}")
    idx = knot_indices(times, meas.times)
    rinv = spd_inverse(meas.r)
    ct_rinv = np.swapaxes(meas.c, 1, 2) @ rinv
    np.add.at(hdiag, idx, ct_rinv @ meas.c)
    np.add.at(rhs, idx, np.einsum("nij,nj->ni", ct_rinv, meas.y))
    return hdiag, rhs


@dataclass(frozen=True)
class Posterior:
    """Gaussian posterior over knots held in information form."""

    mean: np.ndarray
    info: BlockTriDiag
    factor: BlockCholesky
    times: np.ndarray = field(default=None)

    @cached_property
    def covariance_blocks(self) -> BlockTriDiag:
        return blocktri.partial_inverse(self.factor)

    @property
    def marginal_covariances(self) -> np.ndarray:
        return self.covariance_blocks.diag

    def dense_covariance(self) -> np.ndarray:
        n, d = self.info.n_blocks, self.info.block_dim
        eye = np.eye(n * d).reshape(n, d, n * d)
        return blocktri.solve(self.factor, eye).reshape(n * d, n * d)


def solve_information(info: BlockTriDiag, rhs: np.ndarray, times=None) -> Posterior:
    factor = blocktri.factorize(info)
    return Posterior(blocktri.solve(factor, rhs), info, factor, times)


def solve_posterior(p: LiftedPrior, meas: MeasurementStream | None = None) -> Posterior:
    """Solve (P^{-1} + C^T R^{-1} C) x = P^{-1} x_prior + C^T R^{-1} y."""
    info = prior_information(p)
    rhs = prior_information_vector(p)
    if meas is not None and len(meas):
        hdiag, hrhs = measurement_information(p.times, p.dim, meas)
        info = BlockTriDiag(info.diag + hdiag, info.off)
        rhs = rhs + hrhs
    return solve_information(info, rhs, p.times)


@dataclass(frozen=True)
class InterpWeights:
    k: int
    lam: np.ndarray
    psi: np.ndarray
    q_tau: np.ndarray
    cond: np.ndarray
    phi_tau: np.ndarray


def _bracket(times, tau, k=None):
    if not times[0] <= tau <= times[-1]:
        raise OutOfSpan(f"query time {tau} outside [{times[0]}, {times[-1]}]")
    if times.size < 2:
        raise OutOfSpan("interpolation needs at least two knots")
    if k is None:
        k = int(np.searchsorted(times, tau, side="right")) - 1
        k = min(k, times.size - 2)
    elif not times[k] <= tau <= times[k + 1]:
        raise OutOfSpan(f"query time {tau} not inside interval {k}")
    return k


def interp_weights(p: LiftedPrior, tau: float, k: int | None = None) -> InterpWeights:
    """Lambda(tau), Psi(tau) for the bracketing knots k, k+1.

    Psi = Q_tau Phi(t_{k+1}, tau)^T Q_{k+1}^{-1},
    Lambda = Phi(tau, t_k) - Psi Phi(t_{k+1}, t_k).
    ``cond`` is the prior covariance of x(tau) given both knots.
    """
    if p.model is None:
        raise ValueError("interpolation needs a continuous motion model")
    k = _bracket(p.times, tau, k)
    d = p.dim
    eye, zero = np.eye(d), np.zeros((d, d))
    t0, t1 = p.times[k], p.times[k + 1]
    if tau == t0:
        return InterpWeights(k, eye, zero, zero, zero, eye)
    if tau == t1:
        return InterpWeights(k, zero, eye, p.qs[k], zero, p.phis[k])
    phi_tau, q_tau = p.model.phi_q(tau - t0)
    phi_rest = p.model.phi(t1 - tau)
    psi = q_tau @ phi_rest.T @ p.q_inverses[k]
    lam = phi_tau - psi @ p.phis[k]
    cond = q_tau - psi @ phi_rest @ q_tau
    return InterpWeights(k, lam, psi, q_tau, 0.5 * (cond + cond.T), phi_tau)


def interpolate(post: Posterior, p: LiftedPrior, tau: float, k: int | None = None):
    """Posterior mean and covariance of x(tau) from the bracketing knots."""
    w = interp_weights(p, tau, k)
    k = w.k
    hit = np.flatnonzero(p.times[k:k + 2] == tau)
    if hit.size:
        i = k + int(hit[0])
        return post.mean[i].copy(), post.marginal_covariances[i].copy()
    if p.offsets is not None and np.any(p.offsets[k] != 0):
        raise ValueError("interpolation assumes zero exogenous input inside the interval")
    dx = post.mean[k:k + 2] - p.means[k:k + 2]
    mean = w.phi_tau @ p.means[k] + w.lam @ dx[0] + w.psi @ dx[1]
    blocks = post.covariance_blocks
    joint = np.block([[blocks.diag[k], blocks.off[k].T], [blocks.off[k], blocks.diag[k + 1]]])
    gain = np.hstack([w.lam, w.psi])
    cov = gain @ joint @ gain.T + w.cond
    return mean, 0.5 * (cov + cov.T)
