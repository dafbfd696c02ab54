"""One Kalman-filter step as two Schur-complement reductions with GaBP solves,
and the textbook update used as the oracle.

Model orientation is the textbook one: x_k = A x_{k-1} + B u + w, z = H x + v
with H of shape m x d. The block matrix E is written with A^T and H^T in the
upper off-diagonal blocks so that its symmetric layout matches this
orientation.
"""
from dataclasses import dataclass

import numpy as np

from .convfix import double_loop_solve
from .gabp import SolverConfig, solve_gabp_broadcast
from .numcore import DimensionError, make_system


class KalmanSolveError(RuntimeError):
    pass


class SingularInnovationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LdsModel:
    A: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    B: np.ndarray = None
    u: np.ndarray = None

    def __post_init__(self):
        for name in ("A", "H", "Q", "R"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        d, m = self.A.shape[0], self.H.shape[0]
        if self.A.shape != (d, d) or self.Q.shape != (d, d):
            raise DimensionError("A and Q must be d x d")
        if self.H.shape != (m, d) or self.R.shape != (m, m):
            raise DimensionError("H must be m x d and R must be m x m")
        if np.min(np.linalg.eigvalsh((self.Q + self.Q.T) / 2)) < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh((self.R + self.R.T) / 2)) <= 0:
            raise ValueError("R must be positive definite")
        if (self.B is None) != (self.u is None):
            raise ValueError("B and u must be given together")

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.H.shape[0]

    def control(self):
        if self.B is None:
            return np.zeros(self.d)
        return np.atleast_2d(self.B) @ np.atleast_1d(self.u)


def _check_cov(P, d):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape != (d, d):
        raise DimensionError(f"covariance has shape {P.shape}, expected ({d}, {d})")
    return P


def build_E(P_prev, model):
    """[[-P, A^T, 0], [A, Q, H^T], [0, H, R]], of size 2d + m."""
    d, m = model.d, model.m
    P = _check_cov(P_prev, d)
    Z = np.zeros((d, m))
    return np.block([[-P, model.A.T, Z],
                     [model.A, model.Q, model.H.T],
                     [Z.T, model.H, model.R]])


def schur_recursion(E, d, m):
    """Dense two-step reduction of E, the oracle for the GaBP path.

    The first step eliminates the leading block, whose inverse is read as
    -P_{k-1} (giving Q + A P A^T); the second applies the inversion-lemma
    form P^- - P^- H^T (R + H P^- H^T)^-1 H P^-.
    """
    P = -E[:d, :d]
    At = E[:d, d:2 * d]
    Q = E[d:2 * d, d:2 * d]
    Ht = E[d:2 * d, 2 * d:]
    R = E[2 * d:, 2 * d:]
    P_minus = Q + At.T @ P @ At
    G = P_minus @ Ht
    return P_minus, P_minus - G @ np.linalg.solve(R + Ht.T @ G, G.T)


def _columnwise_gabp(S, rhs, cfg, fix=None):
    """Solve S Y = rhs column by column, warm-starting the message state."""
    sys = make_system(S)
    Y = np.empty_like(rhs)
    state = None
    for c in range(rhs.shape[1]):
        if fix is not None:
            rep = double_loop_solve(sys.with_b(rhs[:, c]), fix, cfg, cfg)
        else:
            rep = solve_gabp_broadcast(sys.with_b(rhs[:, c]), cfg, state0=state)
        if not rep.converged:
            raise KalmanSolveError(
                f"GaBP {rep.status} on column {c}; consider the diagonal-loading fix")
        Y[:, c] = rep.x
        state = rep.state
    return Y


def kalman_cov_step_gabp(P_prev, model, cfg=None, fix=None):
    """P_k from the two reductions, with the linear solves done by GaBP.

    The prediction reduction gives P^- = Q + A P_{k-1} A^T. The measurement
    reduction solves (H P^- H^T + R) Y = H P^- columnwise by GaBP and returns
    P^- - (H P^-)^T Y, symmetrized. Plain GaBP may fail on this small dense
    system; that raises KalmanSolveError unless a LoadingSpec ``fix`` selects
    the double-loop correction.
    """
    cfg = SolverConfig(eps=1e-12, max_rounds=2000) if cfg is None else cfg
    P = _check_cov(P_prev, model.d)
    P_minus = model.Q + model.A @ P @ model.A.T
    HP = model.H @ P_minus
    Y = _columnwise_gabp(HP @ model.H.T + model.R, HP, cfg, fix)
    P_k = P_minus - HP.T @ Y
    return (P_k + P_k.T) / 2


def kalman_step_gabp(x_prev, P_prev, z, model, cfg=None, fix=None):
    """Mean and covariance with P_k from GaBP and the gain K = P_k H^T R^-1."""
    P_k = kalman_cov_step_gabp(P_prev, model, cfg, fix)
    x_minus = model.A @ np.atleast_1d(np.asarray(x_prev, dtype=float)) + model.control()
    K = np.linalg.solve(model.R, model.H @ P_k).T
    return x_minus + K @ (np.atleast_1d(np.asarray(z, dtype=float)) - model.H @ x_minus), P_k


def kalman_step_classical(x_prev, P_prev, z, model):
    """Textbook prediction and measurement update; returns (x_k, P_k)."""
    P = _check_cov(P_prev, model.d)
    x_minus = model.A @ np.atleast_1d(np.asarray(x_prev, dtype=float)) + model.control()
    P_minus = model.A @ P @ model.A.T + model.Q
    S = model.H @ P_minus @ model.H.T + model.R
    try:
        K = np.linalg.solve(S, model.H @ P_minus).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError("innovation covariance is singular") from exc
    x_k = x_minus + K @ (np.atleast_1d(np.asarray(z, dtype=float)) - model.H @ x_minus)
    P_k = (np.eye(model.d) - K @ model.H) @ P_minus
    return x_k, P_k


def random_model(d, m, rng):
    """Random stable LDS with PSD Q and PD R."""
    A = rng.standard_normal((d, d))
    A *= 0.9 / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    H = rng.standard_normal((m, d))
    G = rng.standard_normal((d, d))
    F = rng.standard_normal((m, m))
    return LdsModel(A=A, H=H, Q=G @ G.T / d + 0.1 * np.eye(d), R=F @ F.T / m + 0.5 * np.eye(m))
