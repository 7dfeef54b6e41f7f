"""Penalized least-squares solve for V-spline coefficients and smoother leverages.

The normal-equation matrix

    G = B^T W1 B + gamma C^T W2 C + n Omega_lambda

is block tridiagonal in the interleaved (value, slope) layout, i.e. banded
with half-bandwidth 3. Diagonal precision weights keep it banded; general
precision matrices fall back to a dense factorization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _banded
from .core import FittedVSpline, ObservationSet, TimeGrid, VSplineError, _hermite_local
from .penalty import assemble_omega, penalty_integral

RIDGE_FRACTION = 1e-12


class FactorizationError(VSplineError):
    pass


@dataclass(frozen=True, eq=False)
class PrecisionPair:
    """Precision matrices of position (``w1``) and velocity (``w2``) errors.

    Each may be a length-``n`` vector (a diagonal matrix) or an ``n x n``
    symmetric positive-definite matrix. Diagonal matrices are stored as
    vectors so they take the banded path.
    """

    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        for name in ("w1", "w2"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            if w.ndim == 2:
                if w.shape[0] != w.shape[1] or not np.array_equal(w, w.T):
                    raise VSplineError(f"{name} must be a symmetric square matrix")
                if np.count_nonzero(w - np.diag(np.diag(w))) == 0:
                    w = np.diag(w).copy()
            # a zero diagonal weight drops that observation (used by leave-one-out refits)
            if w.ndim == 1 and (np.any(w < 0) or not np.all(np.isfinite(w))):
                raise VSplineError(f"{name} must have non-negative finite weights")
            w.setflags(write=False)
            object.__setattr__(self, name, w)

    @classmethod
    def identity(cls, n: int) -> "PrecisionPair":
        return cls(np.ones(n), np.ones(n))

    @property
    def diagonal(self) -> bool:
        return self.w1.ndim == 1 and self.w2.ndim == 1

    def check(self, n: int) -> None:
        for w in (self.w1, self.w2):
            if w.shape[0] != n:
                raise VSplineError(f"precision matrices must have size {n}, got {w.shape}")


@dataclass(frozen=True)
class SmootherDiagonals:
    """Diagonals of the four smoother matrices mapping (y, v) to fitted values/slopes."""

    S: np.ndarray
    T: np.ndarray
    U: np.ndarray
    V: np.ndarray


def _check_lambdas(grid: TimeGrid, lambdas) -> np.ndarray:
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if lambdas.shape != (grid.n - 1,):
        raise VSplineError(f"need {grid.n - 1} interval penalties, got shape {lambdas.shape}")
    if not np.all(np.isfinite(lambdas)) or np.any(lambdas <= 0):
        raise VSplineError("interval penalties must be finite and positive")
    return lambdas


class VSplineSystem:
    """Factorized normal equations for one grid, gamma, penalty and weighting.

    ``scale`` multiplies the penalty matrix and defaults to the number of
    knots; leave-one-out refits pass the full-data count instead.
    """

    def __init__(self, grid: TimeGrid, gamma: float, lambdas, weights: PrecisionPair | None = None,
                 scale: float | None = None):
        gamma = float(gamma)
        if not np.isfinite(gamma) or gamma < 0:
            raise VSplineError(f"gamma must be non-negative, got {gamma}")
        self.grid = grid
        self.gamma = gamma
        self.lambdas = _check_lambdas(grid, lambdas)
        n = grid.n
        if weights is None:
            weights = PrecisionPair(np.ones(n), np.ones(n))
        weights.check(n)
        self.weights = weights
        self.scale = float(n if scale is None else scale)
        self.omega = assemble_omega(grid, self.lambdas)
        self.ridge = 0.0
        if weights.diagonal:
            self._factor_banded()
        else:
            self._factor_dense()

    @property
    def banded(self) -> bool:
        return self.weights.diagonal

    def _band(self):
        band = self.scale * self.omega.band
        band[0, 0::2] += self.weights.w1
        band[0, 1::2] += self.gamma * self.weights.w2
        return band

    def _factor_banded(self):
        band = self._band()
        lb, status, pivot = _banded.band_cholesky(band)
        if status >= 0 and self.gamma == 0.0:
            self.ridge = RIDGE_FRACTION * np.sum(band[0]) / band.shape[1]
            warnings.warn(f"zero pivot with gamma=0; adding ridge {self.ridge:.3e}",
                          RuntimeWarning, stacklevel=3)
            band[0] += self.ridge
            lb, status, pivot = _banded.band_cholesky(band)
        if status >= 0:
            raise FactorizationError(
                f"system matrix is not positive definite: smallest pivot {pivot:.6e} at row {status}")
        self._lb = lb
        self._zb = None

    def dense_matrix(self) -> np.ndarray:
        """``G`` as a dense array (includes any stabilizing ridge)."""
        n = self.grid.n
        G = self.scale * self.omega.toarray()
        w1, w2 = self.weights.w1, self.weights.w2
        v_idx, d_idx = np.arange(0, 2 * n, 2), np.arange(1, 2 * n, 2)
        G[np.ix_(v_idx, v_idx)] += np.diag(w1) if w1.ndim == 1 else w1
        G[np.ix_(d_idx, d_idx)] += self.gamma * (np.diag(w2) if w2.ndim == 1 else w2)
        return G + self.ridge * np.eye(2 * n)

    def _factor_dense(self):
        G = self.dense_matrix()
        try:
            self._cho = scipy.linalg.cho_factor(G, lower=True)
        except np.linalg.LinAlgError as exc:
            pivot = float(np.min(np.linalg.eigvalsh(G)))
            raise FactorizationError(
                f"system matrix is not positive definite: smallest eigenvalue {pivot:.6e}") from exc
        self._inv = None

    def rhs(self, y, v) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if y.ndim == 1:
            y, v = y[:, None], v[:, None]
        w1, w2 = self.weights.w1, self.weights.w2
        out = np.empty((2 * y.shape[0], y.shape[1]))
        if self.banded:
            out[0::2] = w1[:, None] * y
            out[1::2] = self.gamma * (w2[:, None] * v)
        else:
            out[0::2] = (np.diag(w1) if w1.ndim == 1 else w1) @ y
            out[1::2] = self.gamma * ((np.diag(w2) if w2.ndim == 1 else w2) @ v)
        return out

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.ascontiguousarray(rhs, dtype=np.float64)
        if self.banded:
            return _banded.band_cho_solve(self._lb, rhs)
        return scipy.linalg.cho_solve(self._cho, rhs)

    def theta(self, y, v) -> np.ndarray:
        return self.solve(self.rhs(y, v))

    def inverse_diagonal_blocks(self):
        """``(Z_vv, Z_vd, Z_dv, Z_dd)``: 2x2 diagonal blocks of ``G^{-1}`` per knot."""
        if self.banded:
            if self._zb is None:
                self._zb = _banded.band_selected_inverse(self._lb)
            zb = self._zb
            return zb[0, 0::2], zb[1, 0::2], zb[1, 0::2], zb[0, 1::2]
        if self._inv is None:
            self._inv = scipy.linalg.cho_solve(self._cho, np.eye(2 * self.grid.n))
        Z = self._inv
        return np.diag(Z)[0::2], np.diag(Z, 1)[0::2], np.diag(Z, -1)[0::2], np.diag(Z)[1::2]

    def smoother_diagonals(self) -> SmootherDiagonals:
        w1, w2 = self.weights.w1, self.weights.w2
        if self.banded:
            z_vv, z_vd, z_dv, z_dd = self.inverse_diagonal_blocks()
            return SmootherDiagonals(z_vv * w1, z_vd * w2, z_dv * w1, z_dd * w2)
        # dense path: diag(B Z B^T W1) etc., with W as full matrices
        if self._inv is None:
            self.inverse_diagonal_blocks()
        Z = self._inv
        W1 = np.diag(w1) if w1.ndim == 1 else w1
        W2 = np.diag(w2) if w2.ndim == 1 else w2
        Zvv, Zvd = Z[0::2, 0::2], Z[0::2, 1::2]
        Zdv, Zdd = Z[1::2, 0::2], Z[1::2, 1::2]
        return SmootherDiagonals(np.einsum("ik,ki->i", Zvv, W1), np.einsum("ik,ki->i", Zvd, W2),
                                 np.einsum("ik,ki->i", Zdv, W1), np.einsum("ik,ki->i", Zdd, W2))


def fit(obs: ObservationSet, gamma: float, lambdas, weights: PrecisionPair | None = None
        ) -> FittedVSpline:
    """Fit the V-spline minimizing the penalized position/velocity criterion.

    One factorization serves all coordinates of a multi-dimensional
    observation set; each coordinate is solved independently.
    """
    system = VSplineSystem(obs.grid, gamma, lambdas, weights)
    return _spline(system, system.theta(obs.positions, obs.velocities))


def _spline(system: VSplineSystem, theta) -> FittedVSpline:
    return FittedVSpline(system.grid, theta, system.gamma, system.lambdas)


def smoother_diagonals(obs: ObservationSet, gamma: float, lambdas,
                       weights: PrecisionPair | None = None) -> SmootherDiagonals:
    return VSplineSystem(obs.grid, gamma, lambdas, weights).smoother_diagonals()


def objective_terms(obs: ObservationSet, spline: FittedVSpline, gamma: float | None = None,
                    lambdas=None) -> dict:
    """Position, velocity and penalty parts of the criterion at ``spline``.

    The penalty is the exact quadratic form, accumulated interval by interval.

    ``gamma`` and ``lambdas`` default to those stored on the spline.
    """
    gamma = spline.gamma if gamma is None else float(gamma)
    lambdas = spline.lambdas if lambdas is None else lambdas
    if lambdas is None:
        raise VSplineError("interval penalties are required")
    if spline.grid != obs.grid or spline.dims != obs.dims:
        raise VSplineError("spline and observations do not share a grid and dimension")
    n = obs.n
    position = float(np.sum((obs.positions - spline.knot_values) ** 2)) / n
    velocity = gamma * float(np.sum((obs.velocities - spline.knot_slopes) ** 2)) / n
    penalty = penalty_integral(obs.grid, lambdas, spline.theta)
    return {"position": position, "velocity": velocity, "penalty": penalty,
            "total": position + velocity + penalty}


def objective_value(obs: ObservationSet, spline: FittedVSpline, gamma: float | None = None,
                    lambdas=None) -> float:
    return objective_terms(obs, spline, gamma, lambdas)["total"]


def _one_sided_second_derivatives(spline: FittedVSpline):
    """``f''`` just right of each knot but the last and just left of each but the first."""
    t = spline.grid.times
    h = np.diff(t)[:, None]
    th = spline.theta
    y0, v0, y1, v1 = th[0:-2:2], th[1:-2:2], th[2::2], th[3::2]
    right_of = sum(_hermite_local(k, 0.0, 0.0, h, 2) * c
                   for k, c in (("h00", y0), ("h10", v0), ("h01", y1), ("h11", v1)))
    left_of = sum(_hermite_local(k, h, 0.0, h, 2) * c
                  for k, c in (("h00", y0), ("h10", v0), ("h01", y1), ("h11", v1)))
    return right_of, left_of


def second_derivative_jumps(spline: FittedVSpline) -> np.ndarray:
    """``|f''(t_k+) - f''(t_k-)|`` at the interior knots (Euclidean norm for d > 1)."""
    if spline.grid.n < 3:
        return np.zeros(0)
    right_of, left_of = _one_sided_second_derivatives(spline)
    jump = right_of[1:] - left_of[:-1]
    return np.sqrt(np.sum(jump**2, axis=1))


def max_abs_second_derivative(spline: FittedVSpline) -> float:
    right_of, left_of = _one_sided_second_derivatives(spline)
    return float(max(np.max(np.abs(right_of)), np.max(np.abs(left_of))))
