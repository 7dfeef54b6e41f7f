"""Donoho-Johnstone test velocities, simulated trajectories and error measures."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import FittedVSpline, ObservationSet, TimeGrid, VSplineError
from .penalty import interval_lambdas
from .selection import SearchSpec, select_parameters
from .solver import fit

log = logging.getLogger(__name__)

SIGNALS = ("Blocks", "Bumps", "HeaviSine", "Doppler")

_BLOCKS_KNOTS = np.array([0.1, 0.13, 0.15, 0.23, 0.25, 0.40, 0.44, 0.65, 0.76, 0.78, 0.81])
_BLOCKS_HEIGHTS = np.array([4, -5, 3, -4, 5, -4.2, 2.1, 4.3, -3.1, 2.1, -4.2])
_BUMPS_HEIGHTS = np.array([4, 5, 3, 4, 5, 4.2, 2.1, 4.3, 3.1, 5.1, 4.2])
_BUMPS_WIDTHS = np.array([0.005, 0.005, 0.006, 0.01, 0.01, 0.03, 0.01, 0.01, 0.005, 0.008, 0.005])


def _canonical(name: str) -> str:
    for s in SIGNALS:
        if s.lower() == str(name).lower():
            return s
    raise VSplineError(f"unknown signal {name!r}; expected one of {', '.join(SIGNALS)}")


def eval_signal(name: str, t):
    """Raw (unscaled) Donoho-Johnstone test function on ``[0, 1]``."""
    name = _canonical(name)
    t = np.asarray(t, dtype=np.float64)
    if np.any((t < 0) | (t > 1)) or not np.all(np.isfinite(t)):
        raise VSplineError("test signals are defined on [0, 1]")
    tt = t[..., None]
    if name == "Blocks":
        out = np.sum(_BLOCKS_HEIGHTS * (1 + np.sign(tt - _BLOCKS_KNOTS)) / 2, axis=-1)
    elif name == "Bumps":
        out = np.sum(_BUMPS_HEIGHTS * (1 + np.abs((tt - _BLOCKS_KNOTS) / _BUMPS_WIDTHS)) ** -4.0,
                     axis=-1)
    elif name == "HeaviSine":
        out = 4 * np.sin(4 * np.pi * t) - np.sign(t - 0.3) - np.sign(0.72 - t)
    else:
        eps = 0.05
        out = np.sqrt(t * (1 - t)) * np.sin(2 * np.pi * (1 + eps) / (t + eps))
    return out[()] if out.ndim == 0 else out


def integrate_trapezoid(t, g) -> np.ndarray:
    """Positions from velocities by the trapezoid rule, starting at 0."""
    t = np.asarray(t, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    f = np.zeros_like(g)
    f[1:] = np.cumsum((g[:-1] + g[1:]) / 2 * np.diff(t))
    return f


def _stream(name: str, snr: float, seed: int) -> np.random.SeedSequence:
    """Independent RNG stream per (signal, snr, seed) cell."""
    snr_key = int(round(snr * 1000)) if np.isfinite(snr) else 0
    return np.random.SeedSequence(int(seed), spawn_key=(SIGNALS.index(name), snr_key))


@dataclass(frozen=True, eq=False)
class SimulatedTrajectory:
    name: str
    grid: TimeGrid
    true_g: np.ndarray
    true_f: np.ndarray
    y: np.ndarray
    v: np.ndarray
    snr: float
    seed: int
    indices: np.ndarray

    @property
    def observations(self) -> ObservationSet:
        return ObservationSet(self.grid, self.y, self.v)

    @property
    def n(self) -> int:
        return self.grid.n


def simulate(name: str, n: int = 1024, snr: float = 7.0, seed: int = 0, sampling: str = "full",
             k: int | None = None, scale: float | None = None) -> SimulatedTrajectory:
    """Noisy position/velocity observations of a test trajectory.

    The velocity is the test signal on ``n`` equally spaced times in
    ``[0, 1]`` (optionally multiplied by ``scale``); positions follow by
    trapezoid integration from ``f(0) = 0``. Noise standard deviations are
    ``sd(f)/snr`` and ``sd(g)/snr``; ``snr=inf`` switches noise off.

    ``sampling`` picks a daughter series of the length-``n`` mother:
    ``"regular"`` keeps every other index starting from the first,
    ``"irregular"`` keeps ``k`` sorted random indices (default ``n // 2``)
    that always include both ends.
    """
    name = _canonical(name)
    n = int(n)
    if n < 2:
        raise VSplineError("need at least 2 samples")
    snr = float(snr)
    if not snr > 0:
        raise VSplineError("snr must be positive")
    t = np.linspace(0.0, 1.0, n)
    g = eval_signal(name, t)
    if scale is not None:
        g = g * float(scale)
    f = integrate_trapezoid(t, g)

    noise_seq, sample_seq = _stream(name, snr, seed).spawn(2)
    rng = np.random.default_rng(noise_seq)
    eps_f = rng.standard_normal(n)
    eps_g = rng.standard_normal(n)
    if np.isfinite(snr):
        y = f + eps_f * (np.std(f, ddof=1) / snr)
        v = g + eps_g * (np.std(g, ddof=1) / snr)
    else:
        y, v = f.copy(), g.copy()

    if sampling == "full":
        idx = np.arange(n)
    elif sampling == "regular":
        idx = np.arange(0, n, 2)
    elif sampling == "irregular":
        k = n // 2 if k is None else int(k)
        if k > n:
            raise VSplineError(f"cannot keep {k} of {n} samples")
        if k < 2:
            raise VSplineError("irregular sampling keeps at least the two end points")
        inner = np.random.default_rng(sample_seq).choice(np.arange(1, n - 1), size=k - 2,
                                                         replace=False)
        idx = np.concatenate([[0], np.sort(inner), [n - 1]])
    else:
        raise VSplineError(f"unknown sampling {sampling!r}")

    return SimulatedTrajectory(name, TimeGrid(t[idx]), g[idx], f[idx], y[idx], v[idx], snr,
                               int(seed), idx)


def tmse(true_f, fitted: FittedVSpline, grid: TimeGrid | None = None) -> float:
    """Mean squared error of fitted knot values against noiseless positions."""
    true_f = np.asarray(true_f, dtype=np.float64)
    if true_f.ndim == 1:
        true_f = true_f[:, None]
    if grid is not None and grid != fitted.grid:
        raise VSplineError("true positions and fit are on different grids")
    if true_f.shape != fitted.knot_values.shape:
        raise VSplineError(f"expected {fitted.knot_values.shape} true values, got {true_f.shape}")
    return float(np.mean(np.sum((true_f - fitted.knot_values) ** 2, axis=1)))


def retrieved_snr(fitted: FittedVSpline, y) -> float:
    """``sd(f_hat) / sd(f_hat - y)`` over the knots."""
    fhat = fitted.knot_values[:, 0]
    y = np.asarray(y, dtype=np.float64).reshape(fhat.shape)
    noise = np.std(fhat - y, ddof=1)
    if noise == 0:
        raise VSplineError("SNR undefined: residuals have zero variance")
    return float(np.std(fhat, ddof=1) / noise)


# method name -> (penalty family, whether gamma is fixed at 0)
METHODS = {
    "adaptive": ("adaptive", False),
    "gamma0": ("adaptive", True),
    "nonadaptive": ("constant", False),
}
_METHOD_ALIASES = {"adaptive_gamma0": "gamma0", "gamma=0": "gamma0", "non-adaptive": "nonadaptive",
                   "constant": "nonadaptive"}


def canonical_method(name: str) -> str:
    key = _METHOD_ALIASES.get(name.lower(), name.lower())
    if key not in METHODS:
        raise VSplineError(f"unknown method {name!r}; expected one of {', '.join(METHODS)}")
    return key


def method_search(method: str, gamma_grid=None, parameter_grid=None, refine: bool = True
                  ) -> SearchSpec:
    family, gamma_zero = METHODS[canonical_method(method)]
    kwargs = {"family": family, "refine": refine}
    if gamma_zero:
        kwargs["gamma_grid"] = (0.0,)
    elif gamma_grid is not None:
        kwargs["gamma_grid"] = tuple(gamma_grid)
    if parameter_grid is not None:
        kwargs["parameter_grid"] = tuple(parameter_grid)
    return SearchSpec(**kwargs)


@dataclass(frozen=True)
class BenchmarkRow:
    signal: str
    snr: float
    method: str
    seed: int
    tmse: float
    retrieved_snr: float
    gamma: float = float("nan")
    params: tuple = ()
    error: str = ""


BENCHMARK_COLUMNS = ("signal", "snr", "method", "seed", "tmse", "retrieved_snr")


def evaluate_method(sim: SimulatedTrajectory, method: str, **search) -> BenchmarkRow:
    """Select parameters by CV, fit, and score one method on one simulation."""
    method = canonical_method(method)
    obs = sim.observations
    sel = select_parameters(obs, method_search(method, **search))
    spline = fit(obs, sel.gamma, interval_lambdas(sel.penalty, obs))
    return BenchmarkRow(sim.name, sim.snr, method, sim.seed, tmse(sim.true_f, spline),
                        retrieved_snr(spline, sim.y), sel.gamma, sel.penalty.values)


def run_benchmark(signals=SIGNALS, snrs=(3.0, 7.0), methods=tuple(METHODS), seeds=(0,),
                  n: int = 1024, sampling: str = "full", k: int | None = None,
                  scale: float | None = None, jobs: int = 1, **search) -> list:
    """TMSE and retrieved SNR for every (signal, snr, method, seed) cell.

    A failing cell yields a row with NaN metrics and the error message
    instead of aborting the run. Rows come back in nested loop order
    regardless of ``jobs``.
    """
    signals = [_canonical(s) for s in signals]
    methods = [canonical_method(m) for m in methods]
    cells = [(s, float(r), m, int(seed)) for s in signals for r in snrs for m in methods
             for seed in seeds]

    def run(cell):
        s, r, m, seed = cell
        try:
            sim = simulate(s, n, r, seed, sampling, k, scale)
            return evaluate_method(sim, m, **search)
        except VSplineError as exc:
            log.warning("benchmark cell %s failed: %s", cell, exc)
            return BenchmarkRow(s, r, m, seed, float("nan"), float("nan"), error=str(exc))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=int(jobs)) as pool:
            return list(pool.map(run, cells))
    return [run(c) for c in cells]


def summarize(rows) -> list:
    """Mean TMSE and retrieved SNR per (signal, snr, method), in first-seen order."""
    groups = {}
    for row in rows:
        groups.setdefault((row.signal, row.snr, row.method), []).append(row)
    out = []
    for (signal, snr, method), members in groups.items():
        tm = np.array([r.tmse for r in members])
        rs = np.array([r.retrieved_snr for r in members])
        ok = np.isfinite(tm)
        out.append({"signal": signal, "snr": snr, "method": method,
                    "mean_tmse": float(np.mean(tm[ok])) if ok.any() else float("nan"),
                    "mean_retrieved_snr": float(np.mean(rs[ok])) if ok.any() else float("nan"),
                    "cells": int(ok.sum())})
    return out
