import numpy as np
import pytest

from asynclqr import harness, lqr_core


@pytest.fixture(scope="session")
def nominal():
    return harness.nominal_model()


@pytest.fixture(scope="session")
def init_spec():
    return harness.default_init_spec()


@pytest.fixture(scope="session")
def k0(nominal):
    return harness.initial_controller()


@pytest.fixture(scope="session")
def nominal_opt(nominal, init_spec):
    return lqr_core.optimal_solution(nominal, init_spec)


def truncated_stein_sum(f, w, horizon=1000):
    """Independent oracle: sum_{t=0}^{horizon} (F^T)^t W F^t, term by term."""
    f = np.asarray(f, dtype=np.float64)
    total = np.array(w, dtype=np.float64)
    term = np.array(w, dtype=np.float64)
    for _ in range(horizon):
        term = f.T @ term @ f
        total = total + term
    return total


def seeded_contractive(rng, n=4, rho_low=0.05, rho_high=0.9):
    """Random matrix rescaled to a target spectral radius below one."""
    while True:
        g = rng.standard_normal((n, n))
        radius = np.max(np.abs(np.linalg.eigvals(g)))
        if radius > 1e-9:
            return g * (rng.uniform(rho_low, rho_high) / radius)


def random_psd(rng, n=4):
    g = rng.standard_normal((n, n))
    return g.T @ g + 0.1 * np.eye(n)
