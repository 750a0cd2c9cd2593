"""Ground-truth trajectories sampled from a GP prior, plus noisy measurements."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .gp_traj import MeasurementStream
from .priors import MotionModel, PriorKind

POS_ROW = (1.0, 0.0, 0.0)
ACC_ROW = (0.0, 0.0, 1.0)
TRAIN, EVAL = 0, 1


@dataclass(frozen=True)
class SimConfig:
    """One-axis simulation setup."""

    kind: PriorKind = PriorKind.WNOJ
    qc: float = 1.0
    alpha: float = 10.0
    sigma2: float = 1.0
    x0_mean: tuple = (0.0, 0.0, 1.0)
    p0_diag: tuple = (1e-3, 1e-3, 1e-3)
    duration: float = 1.0
    pos_rate: float = 10.0
    acc_rate: float = 100.0
    sigma_pos: float = 0.01
    sigma_acc: float = 0.01
    n_train: int = 100
    n_eval: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PriorKind(self.kind))
        object.__setattr__(self, "x0_mean", tuple(float(v) for v in self.x0_mean))
        object.__setattr__(self, "p0_diag", tuple(float(v) for v in self.p0_diag))
        if len(self.x0_mean) != 3 or len(self.p0_diag) != 3:
            raise ValueError("x0_mean and p0_diag need three entries (p, v, a)")
        if any(v < 0 for v in self.p0_diag):
            raise ValueError("p0_diag entries must be non-negative")
        if not (self.pos_rate > 0 and self.acc_rate > 0 and self.duration > 0):
            raise ValueError("rates and duration must be positive")
        ratio = self.acc_rate / self.pos_rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("acc_rate must be an integer multiple of pos_rate")
        steps = self.duration * self.pos_rate
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("duration must span a whole number of position periods")
        if not (self.sigma_pos > 0 and self.sigma_acc > 0):
            raise ValueError("noise standard deviations must be positive")
        if self.n_train < 0 or self.n_eval < 0:
            raise ValueError("trajectory counts must be non-negative")

    @property
    def substeps(self) -> int:
        return int(round(self.acc_rate / self.pos_rate))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * self.pos_rate)) * self.substeps

    def model(self) -> MotionModel:
        if self.kind is PriorKind.SINGER:
            return MotionModel.singer(self.alpha, self.sigma2)
        if self.kind is PriorKind.WNOJ:
            return MotionModel.wnoj(self.qc)
        raise ValueError("simulation needs a three-state prior (WNOJ or SINGER)")

    def times(self) -> np.ndarray:
        """Full grid at the accelerometer rate, both ends included."""
        return np.arange(self.n_steps + 1) / self.acc_rate

    def pos_times(self) -> np.ndarray:
        return self.times()[::self.substeps]

    @property
    def p0(self) -> np.ndarray:
        return np.diag(self.p0_diag)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        out["x0_mean"] = list(self.x0_mean)
        out["p0_diag"] = list(self.p0_diag)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown simulation fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class SimTrajectory:
    times: np.ndarray
    states: np.ndarray
    pos_meas: MeasurementStream = field(default=None)
    acc_meas: MeasurementStream = field(default=None)


def experiment_presets() -> tuple[SimConfig, SimConfig]:
    """The WNOJ and Singer study setups."""
    wnoj = SimConfig(kind=PriorKind.WNOJ, qc=1.0, x0_mean=(0.0, 0.0, 1.0))
    singer = SimConfig(kind=PriorKind.SINGER, alpha=10.0, sigma2=1.0, x0_mean=(0.0, 1.0, 0.0))
    return wnoj, singer


def trajectory_rng(seed: int, split: int, index: int) -> np.random.Generator:
    """Independent PCG64 stream per (seed, split, trajectory index)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(split), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """A factor S with S S^T = m for symmetric PSD (possibly singular) m."""
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(0.5 * (m + m.T))
        return v * np.sqrt(np.clip(w, 0.0, None))


def sample_states(model: MotionModel, times: np.ndarray, x0_mean, p0, rng) -> np.ndarray:
    """x_0 ~ N(x0_mean, p0), then x_{k+1} = Phi_k x_k + w_k with w_k ~ N(0, Q_k)."""
    x0_mean = np.asarray(x0_mean, dtype=float)
    d = x0_mean.size
    n = times.size
    z = rng.standard_normal((n, d))
    states = np.empty((n, d))
    states[0] = x0_mean + psd_sqrt(np.asarray(p0, dtype=float)) @ z[0]
    if n > 1:
        phis, qs = model.phi_q(np.diff(times))
        roots = np.stack([psd_sqrt(q) for q in qs])
        w = np.einsum("kij,kj->ki", roots, z[1:])
        for k in range(n - 1):
            states[k + 1] = phis[k] @ states[k] + w[k]
    return states


def corrupt_measurements(traj: SimTrajectory, cfg: SimConfig, rng):
    """Position rows [1 0 0] at pos_rate and acceleration rows [0 0 1] at acc_rate."""
    step = cfg.substeps
    t_pos = traj.times[::step]
    p = traj.states[::step, 0] + cfg.sigma_pos * rng.standard_normal(t_pos.size)
    a = traj.states[:, 2] + cfg.sigma_acc * rng.standard_normal(traj.times.size)
    pos = MeasurementStream.scalar(t_pos, p, POS_ROW, cfg.sigma_pos**2)
    acc = MeasurementStream.scalar(traj.times, a, ACC_ROW, cfg.sigma_acc**2)
    return pos, acc


def sample_trajectory(cfg: SimConfig, rng) -> SimTrajectory:
    times = cfg.times()
    states = sample_states(cfg.model(), times, cfg.x0_mean, cfg.p0, rng)
    traj = SimTrajectory(times, states)
    pos, acc = corrupt_measurements(traj, cfg, rng)
    return SimTrajectory(times, states, pos, acc)


def simulate(cfg: SimConfig, split: int, n: int | None = None) -> list[SimTrajectory]:
    """Trajectories 0..n-1 of a split, each from its own RNG stream."""
    if n is None:
        n = cfg.n_train if split == TRAIN else cfg.n_eval
    return [sample_trajectory(cfg, trajectory_rng(cfg.seed, split, i)) for i in range(n)]
