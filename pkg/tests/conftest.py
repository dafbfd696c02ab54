import sys

import numpy as np
import pytest

from gabpkit.numcore import make_system


def toy_system():
    A = np.array([[1.0, -2, 3], [-2, 1, 0], [3, 0, 1]])
    return make_system(A, np.array([-6.0, 0, 2]))


def random_dd(n, rng, density=1.0, margin=1.0):
    """Random symmetric strictly diagonally dominant system."""
    M = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    M = np.triu(M, 1)
    M = M + M.T
    d = np.abs(M).sum(axis=1) + margin
    return make_system(M + np.diag(d), rng.standard_normal(n))


def random_walk_summable(n, rng, rho=0.8):
    """Unit-diagonal system I - R with rho(|R|) = rho and mixed signs."""
    R = rng.standard_normal((n, n))
    R = np.triu(R, 1)
    R = R + R.T
    R *= rho / np.max(np.abs(np.linalg.eigvals(np.abs(R))))
    return make_system(np.eye(n) - R, rng.standard_normal(n))


def random_tree(n, rng):
    """Random tree system with arbitrary (non-DD) weights and a PD matrix."""
    A = np.zeros((n, n))
    for i in range(1, n):
        j = rng.integers(0, i)
        A[i, j] = A[j, i] = rng.standard_normal()
    A += np.diag(np.abs(A).sum(axis=1) * rng.uniform(0.6, 1.5, n) + 0.1)
    return make_system(A, rng.standard_normal(n))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def toy():
    return toy_system()


def random_pd_non_ws(n, rng, rho_range=(1.1, 3.0)):
    """Unit-diagonal Wishart-type PD matrix with rho(|R|) in rho_range."""
    while True:
        m = rng.integers(int(1.5 * n), 3 * n)
        G = rng.standard_normal((m, n))
        J = G.T @ G / m
        d = np.sqrt(np.diag(J))
        J = J / np.outer(d, d)
        rho = np.max(np.abs(np.linalg.eigvals(np.abs(np.eye(n) - J))))
        if rho_range[0] <= rho <= rho_range[1]:
            return J, rho


def cdma_system(n, k, sigma2, rng):
    """MMSE k x k form of a random +-1/sqrt(n) CDMA channel."""
    from gabpkit.detect import mmse_system, random_cdma
    S, bits, y = random_cdma(n, k, sigma2, rng)
    return mmse_system(S, y, sigma2 * np.ones(n)), S, y


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.ACCEPTANCE):
        terminalreporter.write_line(mod.ACCEPTANCE[k])
