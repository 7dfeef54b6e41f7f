import numpy as np
import pytest

from vspline.core import ObservationSet, TimeGrid
from vspline.penalty import omega_block


def random_obs(rng, n, d=1, spacing=(0.5, 1.5), t0=0.0):
    """Observations on a grid with bounded spacing (keeps G well conditioned)."""
    times = t0 + np.concatenate([[0.0], np.cumsum(rng.uniform(*spacing, n - 1))])
    y = rng.normal(size=(n, d)) + np.sin(times)[:, None]
    v = rng.normal(size=(n, d)) + np.cos(times)[:, None]
    return ObservationSet(TimeGrid(times), y, v)


def dense_omega(grid, lambdas):
    n = grid.n
    omega = np.zeros((2 * n, 2 * n))
    for i, (dt, lam) in enumerate(zip(grid.deltas, lambdas)):
        omega[2 * i:2 * i + 4, 2 * i:2 * i + 4] += lam * omega_block(dt)
    return omega


def design_matrices(n):
    B = np.zeros((n, 2 * n))
    C = np.zeros((n, 2 * n))
    B[np.arange(n), 2 * np.arange(n)] = 1.0
    C[np.arange(n), 2 * np.arange(n) + 1] = 1.0
    return B, C


def dense_system(obs, gamma, lambdas, W1=None, W2=None):
    n = obs.n
    B, C = design_matrices(n)
    W1 = np.eye(n) if W1 is None else W1
    W2 = np.eye(n) if W2 is None else W2
    G = B.T @ W1 @ B + gamma * C.T @ W2 @ C + n * dense_omega(obs.grid, lambdas)
    rhs = B.T @ W1 @ obs.positions + gamma * C.T @ W2 @ obs.velocities
    return G, rhs, B, C


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def report(number, passed, detail):
    """Record one acceptance line; printed live and again in the run summary."""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
