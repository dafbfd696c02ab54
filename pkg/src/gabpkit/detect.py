"""Linear detection: the augmented symmetric embedding of rectangular systems,
MMSE and decorrelator detectors, Gold-code fixtures and kernel ridge
regression."""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .convfix import LoadingSpec, double_loop_solve
from .gabp import SolveReport, SolverConfig, solve_gabp, solve_gabp_broadcast
from .numcore import DimensionError, make_system
from .stationary import StationaryConfig, optimal_sor_omega, solve_stationary


DD_EPS = 1e-3


class DetectionError(RuntimeError):
    pass


@dataclass
class AugmentedSystem:
    """[[I_k, S^T], [S, -Psi]] with observation [0_k; y]."""
    S: np.ndarray
    psi: np.ndarray
    system: object

    @property
    def k(self):
        return self.S.shape[1]

    @property
    def y_tilde(self):
        return self.system.b


def augment(S, psi, y, eps=0.0):
    """Symmetric (k+n) embedding of an n x k matrix S.

    ``eps`` is added to the identity block, the diagonal adjustment used to
    make the embedding strictly diagonally dominant.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2:
        raise DimensionError("S must be a matrix")
    n, k = S.shape
    psi = np.broadcast_to(np.asarray(psi, dtype=float), (n,)).copy()
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != n:
        raise DimensionError(f"y has length {y.shape[0]}, expected {n}")
    if np.any(psi < 0):
        raise ValueError("noise entries Psi_i must be non-negative")
    Ss = sp.csr_matrix(S)
    M = sp.bmat([[(1.0 + eps) * sp.identity(k), Ss.T], [Ss, -sp.diags(psi)]], format="csr")
    return AugmentedSystem(S, psi, make_system(M, np.concatenate([np.zeros(k), y])))


def mmse_oracle(S, y, psi):
    """Dense S^T (S S^T + Psi)^-1 y, the exact first block of the embedding.

    Equals (S^T S + s I)^-1 S^T y for Psi = s I and the pseudoinverse solution
    when Psi = 0 and S has full row rank.
    """
    S = np.asarray(S, dtype=float)
    psi = np.broadcast_to(np.asarray(psi, dtype=float), (S.shape[0],))
    return S.T @ np.linalg.solve(S @ S.T + np.diag(psi), y)


def least_squares_embedding(S, y):
    """Nonsingular [[0_k, S^T], [S, -I_n]] with rhs [0; y].

    Its first k entries solve the normal equations S^T S x = S^T y, which is
    the pseudoinverse solution for tall full-column-rank S, where the
    noise-free embedding [[I, S^T], [S, 0]] is singular.
    """
    S = sp.csr_matrix(np.asarray(S, dtype=float))
    n, k = S.shape
    M = sp.bmat([[sp.csr_matrix((k, k)), S.T], [S, -sp.identity(n)]], format="csr")
    return make_system(M, np.concatenate([np.zeros(k), np.asarray(y, dtype=float)]))


def mmse_system(S, y, psi):
    """The k x k positive-definite form S^T Psi^-1 S + I with rhs S^T Psi^-1 y."""
    S = np.asarray(S, dtype=float)
    psi = np.broadcast_to(np.asarray(psi, dtype=float), (S.shape[0],))
    if np.any(psi <= 0):
        raise ValueError("the k x k MMSE form needs Psi > 0")
    W = S / psi[:, None]
    return make_system(S.T @ W + np.eye(S.shape[1]), W.T @ y)


def mmse_detect(S, y, psi, cfg=None, fix=None, return_report=False):
    """MMSE estimate of the k transmitted symbols.

    Without ``fix`` GaBP runs on the augmented embedding and the first k
    marginal means are returned. For Psi = 0 and a tall S the embedding is
    singular, so the least-squares embedding gives the pseudoinverse instead.
    With a LoadingSpec ``fix`` the double-loop correction solves the equivalent k x k system S^T Psi^-1 S + I.
    Non-convergence raises DetectionError; the caller may retry with ``fix``.
    """
    cfg = SolverConfig(eps=1e-9, max_rounds=5000) if cfg is None else cfg
    S = np.asarray(S, dtype=float)
    k = S.shape[1]
    if np.linalg.matrix_rank(S) < min(S.shape):
        raise DetectionError("S is rank deficient")
    if fix is None:
        noise_free = not np.any(np.asarray(psi, dtype=float))
        if noise_free and S.shape[0] > k:
            system = least_squares_embedding(S, y)
        else:
            system = augment(S, psi, y).system
        rep = solve_gabp_broadcast(system, cfg, allow_zero_diag=True)
        x = rep.x[:k]
    else:
        rep = double_loop_solve(mmse_system(S, y, psi), fix, cfg,
                                SolverConfig(eps=cfg.eps, max_rounds=cfg.max_rounds))
        x = rep.x
    if rep.status == "singular":
        raise DetectionError("a zero-diagonal node never received a message; "
                             "the embedding is singular for GaBP")
    if not rep.converged:
        raise DetectionError(f"GaBP {rep.status}; consider the diagonal-loading fix")
    return (x, rep) if return_report else x


def gold_r3():
    """Cross-correlation matrix of three length-7 Gold codes, b = 1."""
    R = np.array([[7, -1, 3], [-1, 7, -5], [3, -5, 7]]) / 7.0
    return make_system(R, np.ones(3))


def gold_r4():
    """Cross-correlation matrix of four length-7 Gold codes, b = 1."""
    R = np.array([[7, -1, 3, 3], [-1, 7, 3, -1], [3, 3, 7, -1], [3, -1, -1, 7]]) / 7.0
    return make_system(R, np.ones(4))


class Detection(NamedTuple):
    x: np.ndarray
    bits: np.ndarray
    report: SolveReport


def decorrelate(R, cfg=None, method="gabp"):
    """Solve R x = b and take signs.

    ``method`` is one of gabp, jacobi, gauss_seidel, sor (optimal omega).
    """
    cfg = SolverConfig() if cfg is None else cfg
    if method == "gabp":
        rep = solve_gabp(R, cfg)
    elif method in ("jacobi", "gauss_seidel", "sor"):
        omega = optimal_sor_omega(R, cfg.eps) if method == "sor" else 1.0
        rep = solve_stationary(R, StationaryConfig(method, omega, cfg.eps, cfg.max_rounds),
                               accel=cfg.accel)
    else:
        raise ValueError(f"unknown method {method!r}")
    return Detection(rep.x, np.where(rep.x >= 0, 1, -1), rep)


def random_cdma(n, k, sigma2, rng):
    """Random +-1/sqrt(n) spreading, BPSK symbols and AWGN of variance sigma2.

    Returns (S, bits, y).
    """
    S = rng.choice([-1.0, 1.0], size=(n, k)) / np.sqrt(n)
    bits = rng.choice([-1.0, 1.0], size=k)
    y = S @ bits + np.sqrt(sigma2) * rng.standard_normal(n)
    return S, bits, y


def rbf_kernel(X, Z, width):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    return np.exp(-cdist(X, Z, "sqeuclidean") / (2.0 * width ** 2))


def krr_solve(points, y, width, lam, loading=None, cfg=None, bias=False, return_report=False):
    """Kernel ridge dual weights alpha = 2 lam (K + lam I)^-1 y with an RBF kernel.

    With ``loading`` the double-loop correction is used so GaBP sees a
    strictly diagonally dominant matrix. ``bias`` adds the constant 1/N to
    every kernel entry. Non-convergence raises DetectionError.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    # RBF couplings can be tiny, so messages are compared in information form
    cfg = SolverConfig(eps=1e-10, max_rounds=5000, metric="info") if cfg is None else cfg
    points = np.asarray(points, dtype=float)
    K = rbf_kernel(points, points, width)
    if bias:
        K = K + 1.0 / len(points)
    sys = make_system(K + lam * np.eye(len(points)), y)
    if loading is None:
        rep = solve_gabp_broadcast(sys, cfg)
    else:
        rep = double_loop_solve(sys, loading, cfg, SolverConfig(eps=cfg.eps, max_rounds=cfg.max_rounds))
    if not rep.converged:
        raise DetectionError(f"GaBP {rep.status} on the kernel system; try diagonal loading")
    alpha = 2.0 * lam * rep.x
    return (alpha, rep) if return_report else alpha


def krr_predict(points, alpha, lam, width, X_new, bias=False):
    """f(x) = y^T (K + lam I)^-1 k(x), recovered from alpha = 2 lam (K + lam I)^-1 y."""
    k = rbf_kernel(points, X_new, width)
    if bias:
        k = k + 1.0 / len(points)
    return (np.asarray(alpha) / (2.0 * lam)) @ k
