"""Continuous-time GP state estimation with IMU data as inputs or as measurements."""

__version__ = "0.1.0"

from .blocktri import BlockCholesky, BlockTriDiag
from .gp_traj import LiftedPrior, MeasurementStream, Posterior, build_prior, interpolate, solve_posterior
from .priors import MotionModel, PriorKind, SingerParams

__all__ = [
    "BlockCholesky", "BlockTriDiag", "LiftedPrior", "MeasurementStream", "MotionModel",
    "Posterior", "PriorKind", "SingerParams", "build_prior", "interpolate", "solve_posterior",
]
