"""Shared reference constructions for the test suite."""

import numpy as np
from scipy.linalg import expm

from gpimu import blocktri, gp_traj, preint
from gpimu.estimators import measurement_windows
from gpimu.priors import MotionModel, singer_drift


def random_spd_blocktri(rng, n, d, shift=None):
    """A diagonally dominant SPD block-tridiagonal matrix."""
    off = rng.normal(size=(n - 1, d, d)) if n > 1 else np.zeros((0, d, d))
    diag = rng.normal(size=(n, d, d))
    diag = diag @ np.swapaxes(diag, 1, 2)
    bound = 2.0 * np.abs(off).sum(axis=(1, 2)).max(initial=0.0) * d + (shift or 1.0)
    diag += bound * np.eye(d)
    return blocktri.BlockTriDiag(diag, off)


def singer_q_quadrature(dt, alpha, sigma2=1.0, n=4001):
    """Q = sigma2 * int_0^dt expm(A s) L L^T expm(A s)^T ds by Simpson's rule."""
    a = singer_drift(alpha)
    s = np.linspace(0.0, dt, n)
    f = np.array([expm(a * si)[:, 2:3] @ expm(a * si)[:, 2:3].T for si in s])
    w = np.ones(n)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    return sigma2 * dt / (3 * (n - 1)) * np.tensordot(w, f, axes=1)


def random_instance(rng):
    """Small full-rate problem; spacing and noise chosen to keep it well conditioned.

    The time unit is arbitrary: only alpha*dt, qc*dt^5/r and similar
    dimensionless groups matter, so the ranges span the regimes of interest
    without the information matrix losing float64 precision.
    """
    nw, j = int(rng.integers(2, 13)), int(rng.integers(2, 11))
    dt = rng.uniform(0.2, 0.5)
    qc = rng.uniform(0.5, 10.0)
    if rng.random() < 0.5:
        model = MotionModel.wnoj(qc)
    else:
        model = MotionModel.singer(rng.uniform(0.2, 30.0), qc)
    t = np.arange(nw * j + 1) * dt
    ends = t[::j]
    x0 = rng.normal(size=3)
    p0 = np.diag(rng.uniform(0.1, 1.0, 3))
    acc = gp_traj.MeasurementStream.scalar(t, rng.normal(size=t.size), [0, 0, 1], 10 ** rng.uniform(-3, -1))
    pos = gp_traj.MeasurementStream.scalar(ends, rng.normal(size=ends.size), [1, 0, 0], 10 ** rng.uniform(-3, -1))
    return model, t, j, x0, p0, acc, pos


def endpoint_paths(model, t, j, x0, p0, acc, pos):
    """Endpoint (mean, dense covariance) from the full batch, GP preintegration and Schur elimination."""
    full = gp_traj.build_prior(model, t, x0, p0)
    meas = gp_traj.MeasurementStream.concat([acc, pos])
    idx = np.arange(0, t.size, j)
    post = gp_traj.solve_posterior(full, meas)
    sel = np.concatenate([np.arange(3 * i, 3 * i + 3) for i in idx])
    batch = (post.mean[idx], post.dense_covariance()[np.ix_(sel, sel)])
    ends = t[idx]
    windows = measurement_windows(ends, acc, model)
    gp = preint.measurement_endpoint_graph(windows, pos, x0, p0)
    l, r = preint.full_system(full, meas)
    red = preint.schur_marginalize(l, r, idx).solve()
    return batch, (gp.mean, gp.dense_covariance()), (red.mean, red.dense_covariance())


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def dense_prior(prior):
    """Prior mean and covariance over all knots, built in covariance form."""
    n, d = prior.n_knots, prior.dim
    a = np.eye(n * d)
    for k in range(n - 1):
        for j in range(k + 1):
            a[(k + 1) * d:(k + 2) * d, j * d:(j + 1) * d] = prior.phis[k] @ a[k * d:(k + 1) * d, j * d:(j + 1) * d]
    qb = np.zeros((n * d, n * d))
    qb[:d, :d] = prior.p0
    for k in range(n - 1):
        qb[(k + 1) * d:(k + 2) * d, (k + 1) * d:(k + 2) * d] = prior.qs[k]
    return prior.means.ravel(), a @ qb @ a.T


def dense_measurements(times, d, meas):
    idx = gp_traj.knot_indices(times, meas.times)
    m = sum(meas.c.shape[1] for _ in idx)
    c = np.zeros((m, times.size * d))
    rdiag = np.zeros((m, m))
    row = 0
    for j, i in enumerate(idx):
        k = meas.c.shape[1]
        c[row:row + k, i * d:(i + 1) * d] = meas.c[j]
        rdiag[row:row + k, row:row + k] = meas.r[j]
        row += k
    return c, meas.y.ravel(), rdiag


def dense_posterior(prior, meas):
    """Normal-equations oracle in dense arithmetic."""
    mu, p = dense_prior(prior)
    if meas is None or len(meas) == 0:
        return mu, p
    c, y, r = dense_measurements(prior.times, prior.dim, meas)
    h = np.linalg.inv(p) + c.T @ np.linalg.solve(r, c)
    cov = np.linalg.inv(h)
    mean = cov @ (np.linalg.solve(p, mu) + c.T @ np.linalg.solve(r, y))
    return mean, 0.5 * (cov + cov.T)


def dense_condition(mu, p, c, y, r):
    """Covariance-form Gaussian conditioning; tolerates singular prior blocks."""
    s = c @ p @ c.T + r
    gain = np.linalg.solve(s, c @ p).T
    cov = p - gain @ c @ p
    return mu + gain @ (y - c @ mu), 0.5 * (cov + cov.T)


# -------------------------------------------- extended-precision WNOJ oracle

LD = np.longdouble


def _wnoj_ld(dt, qc):
    dt, qc = LD(dt), LD(qc)
    phi = np.array([[1, dt, dt * dt / 2], [0, 1, dt], [0, 0, 1]], dtype=LD)
    q = qc * np.array([[dt**5 / 20, dt**4 / 8, dt**3 / 6],
                       [dt**4 / 8, dt**3 / 3, dt**2 / 2],
                       [dt**3 / 6, dt**2 / 2, dt]], dtype=LD)
    return phi, q


def _chol_ld(a):
    n = a.shape[0]
    lo = np.zeros_like(a)
    for j in range(n):
        lo[j, j] = np.sqrt(a[j, j] - np.dot(lo[j, :j], lo[j, :j]))
        lo[j + 1:, j] = (a[j + 1:, j] - lo[j + 1:, :j] @ lo[j, :j]) / lo[j, j]
    return lo


def _inv_spd_ld(a):
    lo = _chol_ld(a)
    n = a.shape[0]
    eye = np.eye(n, dtype=LD)
    y = np.zeros_like(a)
    for i in range(n):
        y[i] = (eye[i] - lo[i, :i] @ y[:i]) / lo[i, i]
    return y.T @ y


def wnoj_posterior_ld(times, qc, x0, p0, meas):
    """Full-rate WNOJ posterior (mean, covariance) in extended precision.

    Transitions and noise are formed from the time steps in long double, so
    the only float64 rounding is in the inputs themselves.
    """
    n = times.size
    size = 3 * n
    ainv = np.eye(size, dtype=LD)
    qi = np.zeros((size, size), dtype=LD)
    qi[:3, :3] = _inv_spd_ld(np.asarray(p0, dtype=LD))
    for k in range(n - 1):
        phi, q = _wnoj_ld(LD(times[k + 1]) - LD(times[k]), qc)
        ainv[3 * k + 3:3 * k + 6, 3 * k:3 * k + 3] = -phi
        qi[3 * k + 3:3 * k + 6, 3 * k + 3:3 * k + 6] = _inv_spd_ld(q)
    h = ainv.T @ qi @ ainv
    b = np.zeros(size, dtype=LD)
    b[:3] = qi[:3, :3] @ np.asarray(x0, dtype=LD)
    for j, i in enumerate(gp_traj.knot_indices(times, meas.times)):
        c = meas.c[j, 0].astype(LD)
        r = LD(meas.r[j, 0, 0])
        h[3 * i:3 * i + 3, 3 * i:3 * i + 3] += np.outer(c, c) / r
        b[3 * i:3 * i + 3] += c * LD(meas.y[j, 0]) / r
    cov = _inv_spd_ld(h)
    return (cov @ b).reshape(n, 3), cov
