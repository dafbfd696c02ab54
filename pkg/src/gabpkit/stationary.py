"""Jacobi, Gauss-Seidel and SOR baselines sharing the GaBP report format."""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .gabp import SolveReport, ZeroDiagonalError, _safe_residual
from .numcore import spectral_radius

DIVERGENCE_LIMIT = 1e12


@dataclass
class StationaryConfig:
    method: str = "jacobi"
    omega: float = 1.0
    eps: float = 1e-6
    max_rounds: int = 10000
    x0: np.ndarray = None

    def __post_init__(self):
        if self.method not in ("jacobi", "gauss_seidel", "sor"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "sor" and not 0 < self.omega < 2:
            raise ValueError("SOR needs 0 < omega < 2")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


class StationaryProcess:
    """Single-step interface matching GabpProcess."""

    def __init__(self, sys, method, omega=1.0, x0=None):
        zero = np.flatnonzero(sys.diag == 0)
        if zero.size:
            raise ZeroDiagonalError(int(zero[0]))
        self.sys = sys
        self.method = method
        self.omega = 1.0 if method == "gauss_seidel" else omega
        self.state0 = (sys.b.copy() if x0 is None else np.asarray(x0, dtype=float).copy())
        self._off = sys.offdiag()

    def step(self, x):
        sys = self.sys
        if self.method == "jacobi":
            return (sys.b - self._off @ x) / sys.diag
        x = x.copy()
        w = self.omega
        for i in range(sys.n):
            nbrs, vals = sys.neighbors(i)
            gs = (sys.b[i] - vals @ x[nbrs]) / sys.diag[i]
            x[i] = gs if w == 1.0 else (1.0 - w) * x[i] + w * gs
        return x

    def change(self, old, new):
        return float(np.max(np.abs(new - old))) if old.size else 0.0

    def diverged(self, x):
        return (not np.all(np.isfinite(x))) or np.max(np.abs(x), initial=0.0) > DIVERGENCE_LIMIT

    def solution(self, x):
        return x.copy(), np.full(self.sys.n, np.nan)

    def vector(self, x):
        return x.copy()

    restartable = True

    def from_vector(self, v):
        return np.asarray(v, dtype=float).copy()

    def messages_per_round(self):
        return self.sys.n_edges


def solve_stationary(sys, cfg=None, accel="none"):
    """Run Jacobi, Gauss-Seidel or SOR from x0 (default b).

    Stops when max_i |x_i(t) - x_i(t-1)| < eps; declares divergence when
    ||x||_inf exceeds 1e12.
    """
    from .gabp import SolverConfig, run_process
    from . import accel as acc
    cfg = StationaryConfig() if cfg is None else cfg
    proc = StationaryProcess(sys, cfg.method, cfg.omega, cfg.x0)
    loop_cfg = SolverConfig(eps=cfg.eps, max_rounds=cfg.max_rounds)
    if accel == "steffensen":
        return acc.steffensen(proc, loop_cfg)
    if accel == "aitken":
        return acc.aitken_monitor(proc, loop_cfg)
    return run_process(proc, loop_cfg)


def jacobi_spectral_radius(sys):
    B = sys.offdiag().multiply(1.0 / sys.diag[:, None]).tocsr()
    return spectral_radius(B.toarray() if sys.n <= 64 else B)


def optimal_sor_omega(sys, eps=1e-6, max_rounds=10000):
    """Optimal relaxation factor for SOR.

    Uses 2/(1+sqrt(1-rho_J^2)) when the Jacobi iteration matrix has a real
    spectrum inside the unit disk; otherwise a bounded scalar search over
    (0, 2) minimizing the SOR iteration count.
    """
    B = (sys.offdiag().multiply(1.0 / sys.diag[:, None])).toarray()
    eig = np.linalg.eigvals(B) if sys.n <= 400 else None
    if eig is not None and np.max(np.abs(eig.imag)) < 1e-10:
        rho = float(np.max(np.abs(eig)))
        if rho < 1:
            return 2.0 / (1.0 + np.sqrt(1.0 - rho * rho))

    def cost(w):
        rep = solve_stationary(sys, StationaryConfig("sor", w, eps, max_rounds))
        return rep.rounds if rep.converged else max_rounds + 1

    res = minimize_scalar(cost, bounds=(0.05, 1.95), method="bounded",
                          options={"xatol": 1e-3})
    return float(res.x)
