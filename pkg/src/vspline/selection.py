"""Leave-one-out cross-validation, GCV and penalty/gamma search."""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .core import ObservationSet, TimeGrid, VSplineError
from .penalty import FAMILIES, PenaltySpec, interval_lambdas
from .solver import PrecisionPair, VSplineSystem, _spline
from .tabular import write_csv

log = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-8
MAX_DEGENERATE_FRACTION = 0.1
DEFAULT_GAMMA_GRID = tuple(np.logspace(-3, 3, 13))
DEFAULT_PARAMETER_GRID = tuple(np.logspace(-8, 2, 21))
REFINE_MAX_EVALS = 200
REFINE_TOL = 1e-4


class DegenerateCVError(VSplineError):
    pass


@dataclass(frozen=True, eq=False)
class CvScore:
    """Cross-validation score with its per-knot terms.

    Degenerate knots (leverage denominators below ``1e-8``) carry NaN terms
    and are left out of ``value``.
    """

    value: float
    per_point_terms: np.ndarray
    degenerate_points: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def degenerate_fraction(self) -> float:
        return self.degenerate_points.size / self.per_point_terms.size


def _cv_terms(system: VSplineSystem, obs: ObservationSet):
    theta = system.theta(obs.positions, obs.velocities)
    diag = system.smoother_diagonals()
    g = system.gamma
    resid_y = obs.positions - theta[0::2]
    resid_v = obs.velocities - theta[1::2]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = g * diag.T / (1.0 - g * diag.V)
        numer = resid_y + ratio[:, None] * resid_v
        denom = 1.0 - diag.S - ratio * diag.U
        terms = np.sum((numer / denom[:, None]) ** 2, axis=1)
    degenerate = ~np.isfinite(terms) | ~(np.abs(denom) >= DEGENERACY_TOL)
    terms[degenerate] = np.nan
    return theta, terms, np.flatnonzero(degenerate)


def cv_score(obs: ObservationSet, gamma: float, lambdas,
             weights: PrecisionPair | None = None) -> CvScore:
    """Leave-one-out CV score from a single fit and the smoother leverages.

    For ``d > 1`` each knot contributes the squared Euclidean norm of its
    deleted residual vector.
    """
    system = VSplineSystem(obs.grid, gamma, lambdas, weights)
    _, terms, degenerate = _cv_terms(system, obs)
    if degenerate.size == terms.size:
        raise DegenerateCVError("CV undefined at this parameter point")
    return CvScore(float(np.nanmean(terms)), terms, degenerate)


def cv_oracle(obs: ObservationSet, gamma: float, lambdas) -> CvScore:
    """Brute-force leave-one-out CV: refit with each knot's data removed.

    The penalty function stays that of the full data. When the penalties on
    both sides of a deleted interior knot agree (or the knot is an end
    point) the knot is removed from the grid; otherwise it is kept as a
    data-free knot so the penalty function is unchanged. The criterion keeps
    the full-data ``1/n`` scaling in both cases.
    """
    n = obs.n
    if n < 3:
        raise VSplineError("leave-one-out refits need at least 3 knots")
    lambdas = np.asarray(lambdas, dtype=np.float64)
    times = obs.grid.times
    terms = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        if i == 0:
            grid, lam, weights = TimeGrid(times[keep]), lambdas[1:], None
        elif i == n - 1:
            grid, lam, weights = TimeGrid(times[keep]), lambdas[:-1], None
        elif lambdas[i - 1] == lambdas[i]:
            grid, weights = TimeGrid(times[keep]), None
            lam = np.concatenate([lambdas[: i - 1], lambdas[i:]])
        else:
            grid, lam = obs.grid, lambdas
            w = keep.astype(np.float64)
            weights = PrecisionPair(w, w)
        if weights is None:
            y, v = obs.positions[keep], obs.velocities[keep]
        else:
            y, v = obs.positions, obs.velocities
        system = VSplineSystem(grid, gamma, lam, weights, scale=n)
        spline = _spline(system, system.theta(y, v))
        terms[i] = float(np.sum((obs.positions[i] - spline(times[i])) ** 2))
    return CvScore(float(np.mean(terms)), terms)


def gcv_score(obs: ObservationSet, gamma: float, lambdas, weights: PrecisionPair | None = None
              ) -> float:
    """Generalized cross-validation for (diagonally) weighted V-splines.

    Leverages in the leave-one-out formula are replaced by trace averages;
    the cross term between position and velocity residuals is weighted by
    ``sqrt(w1 * w2)``.
    """
    n = obs.n
    weights = PrecisionPair.identity(n) if weights is None else weights
    if not weights.diagonal:
        raise VSplineError("GCV is only supported for diagonal precision weights")
    system = VSplineSystem(obs.grid, gamma, lambdas, weights)
    theta = system.theta(obs.positions, obs.velocities)
    diag = system.smoother_diagonals()
    w1, w2 = weights.w1[:, None], weights.w2[:, None]
    rf = theta[0::2] - obs.positions
    rv = theta[1::2] - obs.velocities
    c = gamma * np.sum(diag.T) / (n - gamma * np.sum(diag.V))
    numer = (np.sum(w1 * rf**2) + 2 * c * np.sum(np.sqrt(w1 * w2) * rf * rv)
             + c**2 * np.sum(w2 * rv**2))
    denom = (n - np.sum(diag.S) - c * np.sum(diag.U)) ** 2
    return float(numer / denom)


@dataclass(frozen=True)
class SearchSpec:
    """Log-spaced search grids for gamma and the family's parameter(s).

    Two-parameter (boom) families search the Cartesian square of
    ``parameter_grid``. ``gamma_grid`` may be ``(0.0,)`` to fix gamma at 0.
    """

    family: str = "adaptive"
    gamma_grid: tuple = DEFAULT_GAMMA_GRID
    parameter_grid: tuple = DEFAULT_PARAMETER_GRID
    refine: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise VSplineError(f"unknown penalty family {self.family!r}")
        gammas = tuple(float(g) for g in self.gamma_grid)
        params = tuple(float(p) for p in self.parameter_grid)
        if not gammas or not params:
            raise VSplineError("search grids must be non-empty")
        if any(not np.isfinite(g) or g < 0 for g in gammas):
            raise VSplineError("gamma candidates must be finite and non-negative")
        if any(not np.isfinite(p) or p <= 0 for p in params):
            raise VSplineError("penalty parameter candidates must be positive")
        object.__setattr__(self, "gamma_grid", gammas)
        object.__setattr__(self, "parameter_grid", params)

    @property
    def n_params(self) -> int:
        return len(FAMILIES[self.family])

    def candidates(self):
        for gamma in self.gamma_grid:
            for params in itertools.product(self.parameter_grid, repeat=self.n_params):
                yield gamma, params


@dataclass(frozen=True)
class TraceRow:
    gamma: float
    params: tuple
    score: float
    degenerate_count: int


@dataclass(frozen=True, eq=False)
class Selection:
    penalty: PenaltySpec
    gamma: float
    score: float
    trace: list
    failures: list
    refined: bool = False

    def lambdas(self, obs: ObservationSet, boom=None) -> np.ndarray:
        return interval_lambdas(self.penalty, obs, boom)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "penalty": self.penalty.to_dict(), "cv_score": self.score,
                "refined": self.refined, "evaluated": len(self.trace),
                "skipped": len(self.failures)}


def _evaluate(obs, family, gamma, params, boom):
    """CV score of one candidate; raises on degeneracy or numerical failure."""
    lam = interval_lambdas(PenaltySpec.from_values(family, params), obs, boom)
    cv = cv_score(obs, gamma, lam)
    if cv.degenerate_fraction > MAX_DEGENERATE_FRACTION:
        raise DegenerateCVError(
            f"{cv.degenerate_points.size} of {obs.n} points have degenerate leverage")
    return cv


def _try_evaluate(args):
    obs, family, gamma, params, boom = args
    try:
        return _evaluate(obs, family, gamma, params, boom), None
    except VSplineError as exc:
        return None, str(exc)


def select_parameters(obs: ObservationSet, spec: SearchSpec, boom=None, jobs: int = 1
                      ) -> Selection:
    """Minimize the CV score over the search grid, optionally polishing it.

    Candidates that fail (degenerate leverages, factorization problems) are
    skipped and reported in ``failures``. Ties go to the smaller gamma, then
    the smaller parameters. With ``spec.refine`` a Nelder-Mead search in
    log10 space starts from the best grid point; gamma is held fixed when
    the grid has a single gamma value.
    """
    cands = list(spec.candidates())
    jobs = max(1, int(jobs))
    args = [(obs, spec.family, g, p, boom) for g, p in cands]
    if jobs == 1:
        results = [_try_evaluate(a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_try_evaluate, args))

    trace, failures = [], []
    for (gamma, params), (cv, err) in zip(cands, results):
        if cv is None:
            failures.append({"gamma": gamma, "params": params, "error": err})
        else:
            trace.append(TraceRow(gamma, params, cv.value, int(cv.degenerate_points.size)))
    if not trace:
        detail = "; ".join(f"gamma={f['gamma']:g} params={f['params']}: {f['error']}"
                           for f in failures[:10])
        raise VSplineError(f"every search candidate failed ({len(failures)}): {detail}")

    best = min(trace, key=lambda r: (r.score, r.gamma, r.params))
    gamma, params, score = best.gamma, best.params, best.score
    refined = False
    if spec.refine:
        out = _refine(obs, spec, boom, gamma, params, score)
        if out is not None and out[2] < score:
            gamma, params, score = out
            refined = True
    return Selection(PenaltySpec.from_values(spec.family, params), gamma, score, trace, failures,
                     refined)


def _grid_step(values, fallback=0.5):
    logs = np.log10(np.unique([v for v in values if v > 0]))
    return float(np.min(np.diff(logs))) / 2 if logs.size > 1 else fallback


def _refine(obs, spec, boom, gamma, params, score):
    free_gamma = len(set(spec.gamma_grid)) > 1 and gamma > 0
    x0 = np.log10(np.array(([gamma] if free_gamma else []) + list(params)))
    steps = np.array(([_grid_step(spec.gamma_grid)] if free_gamma else [])
                     + [_grid_step(spec.parameter_grid)] * len(params))
    simplex = np.vstack([x0] + [x0 + np.eye(x0.size)[k] * steps[k] for k in range(x0.size)])

    def unpack(x):
        vals = 10.0 ** np.asarray(x)
        return (vals[0], tuple(vals[1:])) if free_gamma else (gamma, tuple(vals))

    def objective(x):
        g, p = unpack(x)
        try:
            return _evaluate(obs, spec.family, g, p, boom).value / score
        except VSplineError:
            return np.inf

    res = scipy.optimize.minimize(
        objective, x0, method="Nelder-Mead",
        options={"initial_simplex": simplex, "maxfev": REFINE_MAX_EVALS,
                 "fatol": REFINE_TOL, "xatol": 1e-3})
    if not np.isfinite(res.fun):
        return None
    g, p = unpack(res.x)
    return float(g), tuple(float(v) for v in p), float(res.fun * score)


def write_trace_csv(path, selection: Selection, family: str) -> None:
    names = FAMILIES[family]
    if len(names) == 1:
        header = ["gamma", "param", "score", "degenerate_count"]
    else:
        header = ["gamma", "param_down", "param_up", "score", "degenerate_count"]
    rows = [[r.gamma, *r.params, r.score, r.degenerate_count] for r in selection.trace]
    write_csv(path, header, rows)
