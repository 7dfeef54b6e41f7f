import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vspline.core import FittedVSpline, ObservationSet, TimeGrid
from vspline.penalty import (PenaltySpec, assemble_omega, discrepancy, interval_lambdas,
                             penalty_integral)
from vspline.selection import DegenerateCVError, cv_oracle, cv_score
from vspline.solver import fit, smoother_diagonals

SETTINGS = settings(max_examples=40, deadline=None)
finite = st.floats(-50, 50, allow_nan=False)


@st.composite
def observations(draw, min_n=3, max_n=12):
    n = draw(st.integers(min_n, max_n))
    gaps = draw(arrays(float, n - 1, elements=st.floats(0.2, 3.0)))
    t0 = draw(st.floats(-100, 100))
    times = t0 + np.concatenate([[0.0], np.cumsum(gaps)])
    y = draw(arrays(float, n, elements=finite))
    v = draw(arrays(float, n, elements=finite))
    return ObservationSet(TimeGrid(times), y, v)


lambdas_for = lambda obs: arrays(float, obs.n - 1, elements=st.floats(1e-3, 10.0))
gammas = st.floats(0.0, 20.0)


@SETTINGS
@given(st.data(), observations(), gammas)
def test_fit_is_linear_in_data(data, obs, gamma):
    lam = data.draw(lambdas_for(obs))
    a = data.draw(st.floats(-3, 3))
    y2 = data.draw(arrays(float, obs.n, elements=finite))
    v2 = data.draw(arrays(float, obs.n, elements=finite))
    other = ObservationSet(obs.grid, y2, v2)
    combo = ObservationSet(obs.grid, obs.positions + a * other.positions,
                           obs.velocities + a * other.velocities)
    lhs = fit(combo, gamma, lam).theta
    rhs = fit(obs, gamma, lam).theta + a * fit(other, gamma, lam).theta
    scale = max(1.0, np.abs(lhs).max(), np.abs(rhs).max())
    assert np.max(np.abs(lhs - rhs)) <= 1e-7 * scale


@SETTINGS
@given(st.data(), observations())
def test_omega_psd(data, obs):
    lam = data.draw(lambdas_for(obs))
    x = data.draw(arrays(float, 2 * obs.n, elements=finite))
    omega = assemble_omega(obs.grid, lam)
    quad = omega.quad(x)
    assert quad >= -1e-9 * max(1.0, float(np.sum(np.abs(omega.toarray())) * np.sum(x * x)))
    assert penalty_integral(obs.grid, lam, x) >= 0.0


@SETTINGS
@given(observations(min_n=2))
def test_discrepancy_non_negative(obs):
    for i in range(obs.n - 1):
        _, _, sq = discrepancy(obs.grid, obs, i)
        assert sq >= 0.0


@SETTINGS
@given(st.data(), observations(min_n=4, max_n=10), st.floats(0.05, 10.0))
def test_cv_shortcut_matches_refits(data, obs, gamma):
    lam = data.draw(arrays(float, obs.n - 1, elements=st.floats(1e-2, 10.0)))
    try:
        fast = cv_score(obs, gamma, lam)
    except DegenerateCVError:
        return
    slow = cv_oracle(obs, gamma, lam)
    assert abs(fast.value - slow.value) <= 1e-6 * max(slow.value, 1e-12)


@SETTINGS
@given(st.data(), observations(), gammas)
def test_smoother_diagonals_in_unit_range(data, obs, gamma):
    lam = data.draw(lambdas_for(obs))
    diag = smoother_diagonals(obs, gamma, lam)
    assert np.all(diag.S >= -1e-10) and np.all(diag.S <= 1 + 1e-10)


@SETTINGS
@given(observations(min_n=2), st.floats(0.1, 50.0))
def test_extrapolation_is_linear(obs, dist):
    spline = fit(obs, 1.0, np.full(obs.n - 1, 0.1))
    a, b = obs.grid.a, obs.grid.b
    left = spline(np.array([a - dist]))[0, 0]
    assert np.isclose(left, spline.knot_values[0, 0] - dist * spline.knot_slopes[0, 0],
                      rtol=1e-9, atol=1e-9 * (1 + dist * abs(spline.knot_slopes[0, 0])))
    right = spline(np.array([b + dist]), 1)[0, 0]
    assert right == spline.knot_slopes[-1, 0]
    assert spline(np.array([b + dist]), 2)[0, 0] == 0.0
    assert spline(np.array([a - dist]), 2)[0, 0] == 0.0


@SETTINGS
@given(observations(min_n=2))
def test_spline_interpolates_its_own_knots(obs):
    theta = np.column_stack([obs.positions, obs.velocities]).ravel()
    spline = FittedVSpline(obs.grid, theta)
    np.testing.assert_allclose(spline(obs.grid.times)[:, 0], obs.positions[:, 0], atol=1e-9)
    np.testing.assert_allclose(spline(obs.grid.times, 1)[:, 0], obs.velocities[:, 0], atol=1e-9)


@SETTINGS
@given(observations(), st.floats(1e-3, 10.0))
def test_adaptive_lambdas_positive_finite(obs, eta):
    lam = interval_lambdas(PenaltySpec("adaptive", {"eta": eta}), obs)
    assert np.all(np.isfinite(lam)) and np.all(lam > 0)
    assert lam.max() <= 1e12 * np.median(lam) * (1 + 1e-12)


@SETTINGS
@given(observations(), st.floats(-1e3, 1e3))
def test_fit_translation_in_time(obs, shift):
    lam = np.full(obs.n - 1, 0.3)
    moved = ObservationSet(TimeGrid(obs.grid.times + shift), obs.positions, obs.velocities)
    a, b = fit(obs, 1.0, lam).theta, fit(moved, 1.0, lam).theta
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(a).max()))
