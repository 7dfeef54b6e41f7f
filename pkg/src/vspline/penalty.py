"""Piecewise-constant acceleration penalties and the banded penalty matrix."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import ObservationSet, TimeGrid, VSplineError

# parameter names per family, in the order used by searches and CSV output
FAMILIES = {
    "constant": ("lambda",),
    "adaptive": ("eta",),
    "boom_constant": ("lambda_down", "lambda_up"),
    "boom_adaptive": ("eta_down", "eta_up"),
}

SPEED_FLOOR_FRACTION = 1e-3
LAMBDA_CAP_FACTOR = 1e12

# Upper triangle of the 4x4 interval block, as (row, col, coefficient, power of dT).
# Rows/cols are (value_i, slope_i, value_i+1, slope_i+1).
_OMEGA_BLOCK = (
    (0, 0, 12.0, 3), (0, 1, 6.0, 2), (0, 2, -12.0, 3), (0, 3, 6.0, 2),
    (1, 1, 4.0, 1), (1, 2, -6.0, 2), (1, 3, 2.0, 1),
    (2, 2, 12.0, 3), (2, 3, -6.0, 2),
    (3, 3, 4.0, 1),
)


@dataclass(frozen=True)
class PenaltySpec:
    """A penalty family and its positive parameters.

    >>> PenaltySpec.from_dict({"family": "adaptive", "eta": 0.1}).params
    {'eta': 0.1}
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise VSplineError(
                f"unknown penalty family {self.family!r}; expected one of {sorted(FAMILIES)}")
        names = FAMILIES[self.family]
        if set(self.params) != set(names):
            raise VSplineError(
                f"family {self.family!r} takes parameters {list(names)}, got {sorted(self.params)}")
        clean = {}
        for name in names:
            value = float(self.params[name])
            if not (np.isfinite(value) and value > 0):
                raise VSplineError(f"penalty parameter {name} must be positive, got {value}")
            clean[name] = value
        object.__setattr__(self, "params", clean)

    @classmethod
    def from_values(cls, family: str, values) -> "PenaltySpec":
        names = FAMILIES.get(family)
        if names is None:
            raise VSplineError(f"unknown penalty family {family!r}")
        values = np.atleast_1d(values)
        if len(values) != len(names):
            raise VSplineError(f"family {family!r} takes {len(names)} parameter(s)")
        return cls(family, dict(zip(names, (float(x) for x in values))))

    @classmethod
    def from_dict(cls, doc: dict) -> "PenaltySpec":
        doc = dict(doc)
        family = doc.pop("family", None)
        if family is None:
            raise VSplineError("penalty spec needs a 'family' key")
        return cls(family, doc)

    @classmethod
    def from_json(cls, text: str) -> "PenaltySpec":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {"family": self.family, **self.params}

    @property
    def values(self) -> tuple:
        return tuple(self.params[name] for name in FAMILIES[self.family])

    @property
    def is_boom(self) -> bool:
        return self.family.startswith("boom_")

    @property
    def is_adaptive(self) -> bool:
        return self.family.endswith("adaptive")


def average_speeds(obs: ObservationSet) -> np.ndarray:
    """Straight-line speed ``|y_{i+1} - y_i| / dT_i`` of every interval."""
    steps = np.diff(obs.positions, axis=0)
    return np.sqrt(np.sum(steps**2, axis=1)) / obs.grid.deltas


def interval_lambdas(spec: PenaltySpec, obs: ObservationSet, boom=None) -> np.ndarray:
    """Per-interval penalties ``lambda_i`` (length ``n - 1``) for a family.

    Adaptive families use ``coef * dT_i / vbar_i**2`` where ``vbar_i`` is the
    straight-line speed over the interval. Squared speeds are floored at
    ``(1e-3 * mean speed)**2`` so repeated positions stay finite, and the
    result is capped at ``1e12`` times its median.

    ``boom`` holds one binary flag per interval (1 = boom down) and is
    required exactly for the ``boom_*`` families.
    """
    deltas = obs.grid.deltas
    if np.any(deltas <= 0):
        raise VSplineError("interval lengths must be positive")
    m = deltas.size

    if spec.is_boom:
        if boom is None:
            raise VSplineError(f"family {spec.family!r} needs per-interval boom flags")
        boom = np.asarray(boom)
        if boom.shape != (m,):
            raise VSplineError(f"expected {m} boom flags, got shape {boom.shape}")
        if not np.all((boom == 0) | (boom == 1)):
            raise VSplineError("boom flags must be 0 or 1")
        down, up = spec.values
        coef = np.where(boom == 1, down, up).astype(np.float64)
    else:
        if boom is not None:
            raise VSplineError(f"family {spec.family!r} does not take boom flags")
        coef = np.full(m, spec.values[0])

    if not spec.is_adaptive:
        return coef

    vbar = average_speeds(obs)
    mean_speed = float(np.mean(vbar))
    eps = SPEED_FLOOR_FRACTION * (mean_speed if mean_speed > 0 else 1.0)
    lam = coef * deltas / np.maximum(vbar**2, eps**2)
    return np.minimum(lam, LAMBDA_CAP_FACTOR * np.median(lam))


def discrepancy(grid: TimeGrid, obs: ObservationSet, i: int, dim: int = 0):
    """Endpoint velocity mismatches on interval ``i`` and the squared discrepancy.

    Returns ``(eps_plus, eps_minus, eps_plus**2 + eps_plus*eps_minus + eps_minus**2)``
    where the mismatches are measured against the interval's average velocity.
    """
    if not 0 <= i <= grid.n - 2:
        raise VSplineError(f"interval out of range: {i}")
    y, v = obs.positions[:, dim], obs.velocities[:, dim]
    vbar = (y[i + 1] - y[i]) / (grid.times[i + 1] - grid.times[i])
    ep, em = v[i] - vbar, v[i + 1] - vbar
    return float(ep), float(em), float(ep * ep + ep * em + em * em)


class PenaltyMatrix:
    """Symmetric ``2n x 2n`` penalty Gram matrix in lower band storage.

    ``band[r, j]`` holds entry ``(j + r, j)`` for ``r = 0..3``, the layout
    used by LAPACK/scipy for lower banded symmetric matrices.
    """

    bandwidth = 3

    def __init__(self, band: np.ndarray):
        self.band = band

    @property
    def size(self) -> int:
        return self.band.shape[1]

    def toarray(self) -> np.ndarray:
        m = self.size
        dense = np.zeros((m, m))
        for r in range(self.bandwidth + 1):
            idx = np.arange(m - r)
            dense[idx + r, idx] = self.band[r, : m - r]
            dense[idx, idx + r] = self.band[r, : m - r]
        return dense

    def matvec(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        vec = theta if theta.ndim == 2 else theta[:, None]
        out = self.band[0][:, None] * vec
        m = self.size
        for r in range(1, self.bandwidth + 1):
            b = self.band[r, : m - r][:, None]
            out[r:] += b * vec[: m - r]
            out[: m - r] += b * vec[r:]
        return out if theta.ndim == 2 else out[:, 0]

    def quad(self, theta: np.ndarray) -> float:
        """``sum over columns of theta.T @ Omega @ theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        return float(np.sum(theta * self.matvec(theta)))


def assemble_omega(grid: TimeGrid, lambdas) -> PenaltyMatrix:
    """Sum of ``lambda_i`` times the closed-form interval blocks."""
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if lambdas.shape != (grid.n - 1,):
        raise VSplineError(
            f"need {grid.n - 1} interval penalties, got shape {lambdas.shape}")
    h = grid.deltas
    m = 2 * grid.n
    band = np.zeros((4, m))
    for row, col, coef, power in _OMEGA_BLOCK:
        r = col - row
        # block entry (row, col) of interval i sits at matrix (2i + col, 2i + row)
        band[r, row : row + 2 * (grid.n - 1) : 2] += lambdas * coef / h**power
    return PenaltyMatrix(band)


def omega_block(dt: float) -> np.ndarray:
    """Unweighted 4x4 penalty block of a single interval of length ``dt``."""
    block = np.zeros((4, 4))
    for row, col, coef, power in _OMEGA_BLOCK:
        block[row, col] = block[col, row] = coef / dt**power
    return block


def penalty_integral(grid: TimeGrid, lambdas, theta) -> float:
    """``theta.T @ Omega @ theta`` summed over columns, evaluated per interval.

    Uses the equivalent sum of ``4 * lambda_i * discrepancy_i / dT_i`` over
    the spline's own knot values and slopes. Every term is non-negative, so
    the result never dips below zero through cancellation.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 1:
        theta = theta[:, None]
    lambdas = np.asarray(lambdas, dtype=np.float64)
    h = grid.deltas[:, None]
    y, v = theta[0::2], theta[1::2]
    slope = np.diff(y, axis=0) / h
    ep, em = v[:-1] - slope, v[1:] - slope
    return float(np.sum(4 * lambdas[:, None] * (ep * ep + ep * em + em * em) / h))


def write_penalties_csv(path, grid: TimeGrid, lambdas) -> None:
    from .tabular import write_csv

    t = grid.times
    write_csv(path, ["t_left", "t_right", "lambda"],
              np.column_stack([t[:-1], t[1:], np.asarray(lambdas, dtype=np.float64)]))
