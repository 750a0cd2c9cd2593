"""Transition matrices and process noise for WNOA, WNOJ and Singer priors.

Per axis the Singer state is (p, v, a) with SDE  da = -alpha a dt + dW,
where W has power spectral density sigma2.  The discrete process noise is
``Q_k = sigma2 * Q(dt, alpha)``; alpha -> 0 recovers WNOJ with qc = sigma2.

The closed forms lose precision as x = alpha*dt -> 0, so below a threshold
in x every entry is evaluated from its Taylor series about alpha = 0.  The
series coefficients are exact rationals derived from

    Q_ij = int_0^dt Phi_i3(s) Phi_j3(s) ds,
    Phi_i3(s) = sum_n (-alpha)^n s^(n+p_i) / (n+p_i)!,   p = (2, 1, 0),

so the two branches are independent evaluations of the same quantity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidInterval

Q_SERIES_THRESHOLD = 1.0
JAC_SERIES_THRESHOLD = 4.0
_N_TERMS = 64

_POWERS = (2, 1, 0)
_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


class PriorKind(str, enum.Enum):
    WNOA = "wnoa"
    WNOJ = "wnoj"
    SINGER = "singer"

    @property
    def axis_dim(self) -> int:
        return 2 if self is PriorKind.WNOA else 3


def _q_coeffs(pi: int, pj: int) -> np.ndarray:
    big_p = pi + pj
    out = []
    for n in range(_N_TERMS):
        s = sum(Fraction(1, math.factorial(m + pi) * math.factorial(n - m + pj)) for m in range(n + 1))
        out.append(float(s / (n + big_p + 1)))
    return np.array(out)


_Q_COEFFS = {(i, j): _q_coeffs(_POWERS[i], _POWERS[j]) for i, j in _PAIRS}
# phi_p(x) = sum_n (-x)^n / (n+p)!
_PHI_COEFFS = {p: np.array([1.0 / math.factorial(n + p) for n in range(_N_TERMS)]) for p in (1, 2)}


def _horner(coeffs: np.ndarray, z: np.ndarray) -> np.ndarray:
    out = np.full_like(z, coeffs[-1])
    for c in coeffs[-2::-1]:
        out = out * z + c
    return out


def _dseries(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """d/dx of sum_n c_n (-x)^n."""
    n = np.arange(1, len(coeffs))
    return -_horner(coeffs[1:] * n, -x)


def _check(dt, alpha):
    dt = np.asarray(dt, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(~(dt > 0)):
        raise InvalidInterval(f"interval length must be positive, got {dt}")
    if np.any(~np.isfinite(alpha)) or np.any(alpha < 0):
        raise InvalidInterval(f"alpha must be finite and >= 0, got {alpha}")
    return np.broadcast_arrays(dt, alpha)


def _empty(shape):
    return np.zeros(shape + (3, 3))


# --------------------------------------------------------------------- WNOA/J


def wnoa_phi_q(dt, qc=1.0):
    dt = np.asarray(dt, dtype=float)
    if np.any(~(dt > 0)):
        raise InvalidInterval(f"interval length must be positive, got {dt}")
    qc = np.asarray(qc, dtype=float)
    phi = np.zeros(dt.shape + (2, 2))
    phi[..., 0, 0] = phi[..., 1, 1] = 1.0
    phi[..., 0, 1] = dt
    q = np.empty(dt.shape + (2, 2))
    q[..., 0, 0] = dt**3 / 3.0
    q[..., 0, 1] = q[..., 1, 0] = dt**2 / 2.0
    q[..., 1, 1] = dt
    return phi, q * qc[..., None, None]


def wnoj_phi_q(dt, qc=1.0):
    dt = np.asarray(dt, dtype=float)
    if np.any(~(dt > 0)):
        raise InvalidInterval(f"interval length must be positive, got {dt}")
    qc = np.asarray(qc, dtype=float)
    phi = _empty(dt.shape)
    phi[..., 0, 0] = phi[..., 1, 1] = phi[..., 2, 2] = 1.0
    phi[..., 0, 1] = phi[..., 1, 2] = dt
    phi[..., 0, 2] = dt**2 / 2.0
    q = _empty(dt.shape)
    q[..., 0, 0] = dt**5 / 20.0
    q[..., 0, 1] = dt**4 / 8.0
    q[..., 0, 2] = dt**3 / 6.0
    q[..., 1, 1] = dt**3 / 3.0
    q[..., 1, 2] = dt**2 / 2.0
    q[..., 2, 2] = dt
    q = q + np.swapaxes(np.triu(q, 1), -1, -2)
    return phi, q * qc[..., None, None]


# --------------------------------------------------------------------- Singer


def _phi_closed(dt, a):
    e = np.exp(-a * dt)
    phi = _empty(dt.shape)
    phi[..., 0, 0] = phi[..., 1, 1] = 1.0
    phi[..., 0, 1] = dt
    phi[..., 0, 2] = (a * dt - 1.0 + e) / a**2
    phi[..., 1, 2] = (1.0 - e) / a
    phi[..., 2, 2] = e
    return phi


def _phi_series(dt, a):
    x = a * dt
    phi = _empty(dt.shape)
    phi[..., 0, 0] = phi[..., 1, 1] = 1.0
    phi[..., 0, 1] = dt
    phi[..., 0, 2] = dt**2 * _horner(_PHI_COEFFS[2], -x)
    phi[..., 1, 2] = dt * _horner(_PHI_COEFFS[1], -x)
    phi[..., 2, 2] = np.exp(-x)
    return phi


def _q_closed(dt, a):
    e1 = np.exp(-a * dt)
    e2 = np.exp(-2.0 * a * dt)
    x = a * dt
    q = _empty(dt.shape)
    q[..., 0, 0] = 0.5 / a**5 * (1.0 - e2 + 2.0 * x + 2.0 / 3.0 * x**3 - 2.0 * x**2 - 4.0 * x * e1)
    q[..., 0, 1] = 0.5 / a**4 * (e2 + 1.0 - 2.0 * e1 + 2.0 * x * e1 - 2.0 * x + x**2)
    q[..., 0, 2] = 0.5 / a**3 * (1.0 - e2 - 2.0 * x * e1)
    q[..., 1, 1] = 0.5 / a**3 * (4.0 * e1 - 3.0 - e2 + 2.0 * x)
    q[..., 1, 2] = 0.5 / a**2 * (e2 + 1.0 - 2.0 * e1)
    q[..., 2, 2] = 0.5 / a * (1.0 - e2)
    return _symmetrize_upper(q)


def _q_series(dt, a):
    x = a * dt
    q = _empty(dt.shape)
    for i, j in _PAIRS:
        order = _POWERS[i] + _POWERS[j] + 1
        q[..., i, j] = dt**order * _horner(_Q_COEFFS[i, j], -x)
    return _symmetrize_upper(q)


def _dq_closed(dt, a):
    e = np.exp(-a * dt)
    e2 = np.exp(-2.0 * a * dt)
    d = _empty(dt.shape)
    d[..., 0, 0] = (-2.0 * dt**3 / (3.0 * a**3) + dt**2 * (2.0 * e + 3.0) / a**4
                    + 5.0 * (e2 - 1.0) / (2.0 * a**6) + dt * (e2 + 8.0 * e - 4.0) / a**5)
    d[..., 0, 1] = (-dt**2 * (e + 1.0) / a**3 + dt * (3.0 - e2 - 2.0 * e) / a**4
                    + (4.0 * e - 2.0 * e2 - 2.0) / a**5)
    d[..., 0, 2] = dt**2 * e / a**2 + 3.0 * (e2 - 1.0) / (2.0 * a**4) + dt * (e2 + 2.0 * e) / a**3
    d[..., 1, 1] = (3.0 * e2 - 12.0 * e + 9.0) / (2.0 * a**4) + dt * (e2 - 2.0 * e - 2.0) / a**3
    d[..., 1, 2] = (2.0 * e - e2 - 1.0) / a**3 + dt * (e - e2) / a**2
    d[..., 2, 2] = (e2 - 1.0) / (2.0 * a**2) + dt * e2 / a
    return _symmetrize_upper(d)


def _dq_series(dt, a):
    x = a * dt
    d = _empty(dt.shape)
    for i, j in _PAIRS:
        order = _POWERS[i] + _POWERS[j] + 2
        d[..., i, j] = dt**order * _dseries(_Q_COEFFS[i, j], x)
    return _symmetrize_upper(d)


def _dphi_closed(dt, a):
    e = np.exp(-a * dt)
    d = _empty(dt.shape)
    d[..., 0, 2] = 2.0 * (1.0 - e) / a**3 - dt * (e + 1.0) / a**2
    d[..., 1, 2] = (e - 1.0) / a**2 + dt * e / a
    d[..., 2, 2] = -dt * e
    return d


def _dphi_series(dt, a):
    x = a * dt
    d = _empty(dt.shape)
    d[..., 0, 2] = dt**3 * _dseries(_PHI_COEFFS[2], x)
    d[..., 1, 2] = dt**2 * _dseries(_PHI_COEFFS[1], x)
    d[..., 2, 2] = -dt * np.exp(-x)
    return d


def _symmetrize_upper(m):
    return m + np.swapaxes(np.triu(m, 1), -1, -2)


def _branch(closed, series, threshold, dt, alpha, branch):
    dt, alpha = _check(dt, alpha)
    if branch == "closed":
        return closed(dt, alpha)
    if branch == "series":
        return series(dt, alpha)
    if branch != "auto":
        raise ValueError(f"unknown branch {branch!r}")
    small = alpha * dt < threshold
    if np.all(small):
        return series(dt, alpha)
    if not np.any(small):
        return closed(dt, alpha)
    out = _empty(dt.shape)
    out[small] = series(dt[small], alpha[small])
    out[~small] = closed(dt[~small], alpha[~small])
    return out


def singer_phi(dt, alpha, branch="auto"):
    """Singer transition matrix Phi(t + dt, t), shape (..., 3, 3)."""
    if branch == "auto" and np.all(np.asarray(alpha) == 0):
        return wnoj_phi_q(dt)[0]
    return _branch(_phi_closed, _phi_series, Q_SERIES_THRESHOLD, dt, alpha, branch)


def singer_q(dt, alpha, sigma2=1.0, branch="auto"):
    """Singer process noise sigma2 * Q(dt, alpha), shape (..., 3, 3)."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(~(sigma2 > 0)):
        raise InvalidInterval(f"sigma2 must be positive, got {sigma2}")
    if branch == "auto" and np.all(np.asarray(alpha) == 0):
        q = wnoj_phi_q(dt)[1]
    else:
        q = _branch(_q_closed, _q_series, Q_SERIES_THRESHOLD, dt, alpha, branch)
    return q * sigma2[..., None, None]


def q_alpha_jacobian(dt, alpha, branch="auto"):
    """Partials of Q(dt, alpha) and Phi(dt, alpha) with respect to alpha.

    Returns ``(dQ, dPhi)``; scale ``dQ`` by sigma2 for the process noise.
    The motion-error partial follows as ``de_k/dalpha = -dPhi @ x_{k-1}``.
    """
    dq = _branch(_dq_closed, _dq_series, JAC_SERIES_THRESHOLD, dt, alpha, branch)
    dphi = _branch(_dphi_closed, _dphi_series, JAC_SERIES_THRESHOLD, dt, alpha, branch)
    return dq, dphi


def singer_drift(alpha: float) -> np.ndarray:
    """Drift matrix A of the per-axis Singer SDE."""
    return np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -alpha]])


# ---------------------------------------------------------- multi-axis models


@dataclass(frozen=True)
class SingerParams:
    alpha: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        alpha, sigma2 = np.broadcast_arrays(alpha, sigma2)
        if np.any(~np.isfinite(alpha)) or np.any(alpha < 0):
            raise ValueError(f"alpha must be finite and >= 0, got {alpha}")
        if np.any(~(sigma2 > 0)):
            raise ValueError(f"sigma2 must be positive, got {sigma2}")
        object.__setattr__(self, "alpha", alpha.copy())
        object.__setattr__(self, "sigma2", sigma2.copy())

    @property
    def n_axes(self) -> int:
        return self.alpha.size


def stack_axes(blocks: np.ndarray) -> np.ndarray:
    """Interleave per-axis blocks (..., n_axes, m, m) into the stacked layout.

    State index of derivative order i on axis j is ``i * n_axes + j``.
    """
    blocks = np.asarray(blocks)
    n, m = blocks.shape[-3], blocks.shape[-1]
    out = np.zeros(blocks.shape[:-3] + (n * m, n * m))
    for j in range(n):
        idx = np.arange(m) * n + j
        out[..., idx[:, None], idx[None, :]] = blocks[..., j, :, :]
    return out


@dataclass(frozen=True)
class MotionModel:
    """A time-invariant GP motion prior: Phi(dt) and Q(dt) per interval."""

    kind: PriorKind
    qc: np.ndarray | None = None
    params: SingerParams | None = None

    @classmethod
    def wnoa(cls, qc=1.0):
        return cls(PriorKind.WNOA, qc=np.atleast_1d(np.asarray(qc, dtype=float)))

    @classmethod
    def wnoj(cls, qc=1.0):
        return cls(PriorKind.WNOJ, qc=np.atleast_1d(np.asarray(qc, dtype=float)))

    @classmethod
    def singer(cls, alpha, sigma2):
        return cls(PriorKind.SINGER, params=SingerParams(alpha, sigma2))

    @property
    def n_axes(self) -> int:
        return self.params.n_axes if self.kind is PriorKind.SINGER else self.qc.size

    @property
    def dim(self) -> int:
        return self.kind.axis_dim * self.n_axes

    def phi_q(self, dt) -> tuple[np.ndarray, np.ndarray]:
        """Transition and process noise for interval length(s) ``dt``."""
        dt = np.asarray(dt, dtype=float)
        phis, qs = [], []
        for j in range(self.n_axes):
            if self.kind is PriorKind.SINGER:
                a, s2 = self.params.alpha[j], self.params.sigma2[j]
                phis.append(singer_phi(dt, a))
                qs.append(singer_q(dt, a, s2))
            else:
                base = wnoa_phi_q if self.kind is PriorKind.WNOA else wnoj_phi_q
                phi, q = base(dt, self.qc[j])
                phis.append(phi)
                qs.append(q)
        if self.n_axes == 1:
            return phis[0], qs[0]
        return stack_axes(np.stack(phis, axis=-3)), stack_axes(np.stack(qs, axis=-3))

    def phi(self, dt) -> np.ndarray:
        return self.phi_q(dt)[0]

    def q(self, dt) -> np.ndarray:
        return self.phi_q(dt)[1]
