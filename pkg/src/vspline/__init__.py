"""Smoothing splines for paired position/velocity data (V-splines)."""

from .core import (BasisId, FittedVSpline, ObservationSet, SampledTrajectory, TimeGrid,
                   VSplineError, eval_hermite_basis, eval_spline, sample_spline)
from .geo import (GpsRecord, PlanarTrack, boustrophedon_track, parse_track, project,
                  reconstruct_track, straight_track, unproject)
from .penalty import PenaltyMatrix, PenaltySpec, assemble_omega, discrepancy, interval_lambdas
from .selection import (CvScore, SearchSpec, Selection, cv_oracle, cv_score, gcv_score,
                        select_parameters)
from .signals import eval_signal, retrieved_snr, run_benchmark, simulate, tmse
from .solver import (FactorizationError, PrecisionPair, SmootherDiagonals, fit, objective_value,
                     second_derivative_jumps, smoother_diagonals)

__all__ = [
    "BasisId", "CvScore", "FactorizationError", "FittedVSpline", "GpsRecord", "ObservationSet",
    "PenaltyMatrix", "PenaltySpec", "PlanarTrack", "PrecisionPair", "SampledTrajectory",
    "SearchSpec", "Selection", "SmootherDiagonals", "TimeGrid", "VSplineError",
    "assemble_omega", "boustrophedon_track", "cv_oracle", "cv_score", "discrepancy",
    "eval_hermite_basis", "eval_signal", "eval_spline", "fit", "gcv_score", "interval_lambdas",
    "objective_value", "parse_track", "project", "reconstruct_track", "retrieved_snr",
    "run_benchmark", "sample_spline", "second_derivative_jumps", "select_parameters",
    "simulate", "smoother_diagonals", "straight_track", "tmse", "unproject",
]
