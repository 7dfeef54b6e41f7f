"""Domain types, the cubic Hermite basis and evaluation of fitted V-splines.

Coefficients of a fitted spline are stored interleaved per knot: row ``2*i``
holds the value at knot ``i`` and row ``2*i + 1`` the first derivative, so the
position/velocity design matrices reduce to index selections.

Interval indices are zero-based throughout: interval ``i`` is
``[times[i], times[i + 1])`` for ``i = 0, ..., n - 2``, the last one closed on
the right.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

HERMITE_KINDS = ("h00", "h10", "h01", "h11")


class VSplineError(ValueError):
    """Base class for invalid inputs and numerical failures in this package."""


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing knot times."""

    times: np.ndarray

    def __post_init__(self):
        times = _frozen(self.times)
        if times.ndim != 1 or times.size < 2:
            raise VSplineError("a time grid needs at least two knots")
        if not np.all(np.isfinite(times)):
            raise VSplineError("knot times must be finite")
        if np.any(np.diff(times) <= 0):
            raise VSplineError("knot times must be strictly increasing")
        object.__setattr__(self, "times", times)

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def a(self) -> float:
        return float(self.times[0])

    @property
    def b(self) -> float:
        return float(self.times[-1])

    def locate(self, t) -> np.ndarray:
        """Interval index for each ``t``; half-open except the last interval."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(idx, 0, self.n - 2)

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Paired position and velocity observations on a time grid.

    ``positions`` and ``velocities`` are ``(n, d)`` arrays; 1-D input is
    promoted to a single column.
    """

    grid: TimeGrid
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        pos = _frozen(self.positions)
        vel = _frozen(self.velocities)
        if pos.ndim == 1:
            pos = _frozen(pos[:, None])
        if vel.ndim == 1:
            vel = _frozen(vel[:, None])
        if pos.shape != vel.shape:
            raise VSplineError(
                f"positions {pos.shape} and velocities {vel.shape} differ in shape")
        if pos.shape[0] != self.grid.n:
            raise VSplineError(
                f"expected {self.grid.n} observation rows, got {pos.shape[0]}")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
            raise VSplineError("observations contain NaN or infinite values")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)

    @classmethod
    def from_arrays(cls, t, y, v) -> "ObservationSet":
        return cls(TimeGrid(t), y, v)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def dims(self) -> int:
        return self.positions.shape[1]

    def column(self, k: int) -> "ObservationSet":
        """The 1-D observation set of coordinate ``k``."""
        return ObservationSet(self.grid, self.positions[:, k], self.velocities[:, k])


@dataclass(frozen=True)
class BasisId:
    kind: str
    interval: int

    def __post_init__(self):
        if self.kind not in HERMITE_KINDS:
            raise VSplineError(f"unknown Hermite basis kind {self.kind!r}")


def _hermite_local(kind, t, left, width, order):
    """Hermite basis ``kind`` on ``[left, left + width]`` evaluated at ``t``."""
    u = t - left
    s = u / width
    if kind == "h00":
        if order == 0:
            return 2 * s**3 - 3 * s**2 + 1
        if order == 1:
            return (6 * s**2 - 6 * s) / width
        return (12 * s - 6) / width**2
    if kind == "h01":
        if order == 0:
            return -2 * s**3 + 3 * s**2
        if order == 1:
            return (-6 * s**2 + 6 * s) / width
        return (-12 * s + 6) / width**2
    if kind == "h10":
        if order == 0:
            return u**3 / width**2 - 2 * u**2 / width + u
        if order == 1:
            return 3 * u**2 / width**2 - 4 * u / width + 1
        return 6 * u / width**2 - 4 / width
    # h11
    if order == 0:
        return u**3 / width**2 - u**2 / width
    if order == 1:
        return 3 * u**2 / width**2 - 2 * u / width
    return 6 * u / width**2 - 2 / width


def _check_order(order):
    if order not in (0, 1, 2):
        raise VSplineError(f"derivative order must be 0, 1 or 2, got {order!r}")


def eval_hermite_basis(basis: BasisId, grid: TimeGrid, t, derivative_order: int = 0):
    """Evaluate one Hermite basis function (or a derivative) of the grid.

    The function is supported on its own interval only; the last interval
    includes its right end point.

    Examples
    --------
    >>> g = TimeGrid([0.0, 1.0])
    >>> float(eval_hermite_basis(BasisId("h00", 0), g, 0.5))
    0.5
    """
    _check_order(derivative_order)
    i = basis.interval
    if not 0 <= i <= grid.n - 2:
        raise VSplineError(f"interval out of range: {i} (grid has {grid.n - 1})")
    t = np.asarray(t, dtype=np.float64)
    left, right = grid.times[i], grid.times[i + 1]
    inside = (t >= left) & ((t < right) | ((i == grid.n - 2) & (t == right)))
    value = _hermite_local(basis.kind, t, left, right - left, derivative_order)
    out = np.where(inside, value, 0.0)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class FittedVSpline:
    """A cubic V-spline in interleaved (value, slope) knot coefficients.

    ``theta`` has shape ``(2n, d)``. Outside ``[t_1, t_n]`` the spline
    continues linearly from the boundary knots.
    """

    grid: TimeGrid
    theta: np.ndarray
    gamma: float = 0.0
    lambdas: np.ndarray | None = None

    def __post_init__(self):
        theta = _frozen(self.theta)
        if theta.ndim == 1:
            theta = _frozen(theta[:, None])
        if theta.shape[0] != 2 * self.grid.n:
            raise VSplineError(
                f"theta needs {2 * self.grid.n} rows for {self.grid.n} knots")
        object.__setattr__(self, "theta", theta)
        if self.lambdas is not None:
            object.__setattr__(self, "lambdas", _frozen(self.lambdas))

    @property
    def dims(self) -> int:
        return self.theta.shape[1]

    @property
    def knot_values(self) -> np.ndarray:
        return self.theta[0::2]

    @property
    def knot_slopes(self) -> np.ndarray:
        return self.theta[1::2]

    def __call__(self, t, derivative_order: int = 0) -> np.ndarray:
        """Evaluate at scalar or array ``t``; returns shape ``(..., d)``."""
        _check_order(derivative_order)
        t = np.asarray(t, dtype=np.float64)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        times = self.grid.times
        idx = self.grid.locate(t)
        left = times[idx]
        width = times[idx + 1] - left
        y0, v0 = self.theta[2 * idx], self.theta[2 * idx + 1]
        y1, v1 = self.theta[2 * idx + 2], self.theta[2 * idx + 3]
        out = np.zeros((t.size, self.dims))
        for coef, kind in ((y0, "h00"), (v0, "h10"), (y1, "h01"), (v1, "h11")):
            out += _hermite_local(kind, t, left, width, derivative_order)[:, None] * coef

        below, above = t < times[0], t > times[-1]
        if below.any() or above.any():
            for mask, k in ((below, 0), (above, self.grid.n - 1)):
                if not mask.any():
                    continue
                y, v = self.theta[2 * k], self.theta[2 * k + 1]
                if derivative_order == 0:
                    out[mask] = y + (t[mask] - times[k])[:, None] * v
                elif derivative_order == 1:
                    out[mask] = v
                else:
                    out[mask] = 0.0
        return out[0] if scalar else out

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.times.tolist(),
            "gamma": float(self.gamma),
            "lambdas": None if self.lambdas is None else self.lambdas.tolist(),
            "theta": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedVSpline":
        lambdas = doc.get("lambdas")
        return cls(TimeGrid(doc["grid"]), np.asarray(doc["theta"], dtype=np.float64),
                   float(doc.get("gamma", 0.0)),
                   None if lambdas is None else np.asarray(lambdas, dtype=np.float64))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "FittedVSpline":
        return cls.from_dict(json.loads(text))


def eval_spline(spline: FittedVSpline, t, derivative_order: int = 0) -> np.ndarray:
    """Value or derivative of ``spline`` at ``t`` as a length-``d`` vector."""
    return spline(t, derivative_order)


@dataclass(frozen=True)
class SampledTrajectory:
    t: np.ndarray
    f: np.ndarray
    df: np.ndarray
    d2f: np.ndarray

    def rows(self) -> int:
        return self.t.size


def sample_spline(spline: FittedVSpline, resolution: int) -> SampledTrajectory:
    """Evaluate the spline and its first two derivatives on a uniform grid."""
    if int(resolution) != resolution or resolution < 2:
        raise VSplineError(f"resolution must be an integer >= 2, got {resolution!r}")
    t = np.linspace(spline.grid.a, spline.grid.b, int(resolution))
    # hit the knots exactly where linspace rounding would miss them
    t[0], t[-1] = spline.grid.a, spline.grid.b
    return SampledTrajectory(t, spline(t, 0), spline(t, 1), spline(t, 2))


def sample_columns(samples: SampledTrajectory, names: Sequence[str] | None = None):
    """Column headers and a 2-D table for CSV export of ``samples``."""
    d = samples.f.shape[1]
    if d == 1:
        header = ["t", "f", "df", "d2f"]
    else:
        names = list(names) if names is not None else [str(k) for k in range(d)]
        header = ["t"]
        for part in ("f", "df", "d2f"):
            header += [f"{part}_{name}" for name in names]
    table = np.column_stack([samples.t, samples.f, samples.df, samples.d2f])
    return header, table
