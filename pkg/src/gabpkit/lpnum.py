"""Linear programming and network utility maximization with GaBP inner solves.

The LP part covers the log-barrier Newton direction through its least-squares
form and the symmetrized primal-dual Newton system. The NUM part generates
random routing problems and solves them by a primal-dual interior-point
method, with projected-subgradient dual decomposition as the baseline.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .convfix import LoadingSpec, double_loop_solve
from .detect import least_squares_embedding
from .gabp import SolverConfig, solve_gabp, solve_gabp_broadcast
from .numcore import make_system

log = logging.getLogger(__name__)


class InfeasibleIterateError(ValueError):
    pass


class InnerSolveError(RuntimeError):
    pass


class LineSearchError(RuntimeError):
    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class LpProblem:
    """minimize c^T x subject to A x = b, x >= 0, with a strictly feasible x0."""
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    x0: np.ndarray = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        p, n = self.A.shape
        if self.c.shape != (n,) or self.b.shape != (p,):
            raise ValueError("c, A, b dimensions are inconsistent")
        if self.x0 is not None:
            self.x0 = np.asarray(self.x0, dtype=float)
            if np.any(self.x0 <= 0):
                raise InfeasibleIterateError("x0 must be strictly positive")
            if np.max(np.abs(self.A @ self.x0 - self.b)) > 1e-8:
                raise InfeasibleIterateError("x0 violates A x0 = b")


def _inner_cfg(cfg):
    return SolverConfig(eps=1e-10, max_rounds=5000) if cfg is None else cfg


def barrier_newton_direction(lp, x, mu, cfg=None):
    """Newton direction of c^T x - mu sum log x on {A x = b}.

    y solves min ||X A^T y - (X c - mu 1)||^2, whose normal equations are
    A X^2 A^T y = A X^2 c - mu A X 1; the least-squares problem is solved by
    GaBP on its symmetric embedding. Then dx = x - X^2 (c - A^T y) / mu.
    If GaBP does not converge, the positive-definite normal equations are
    solved by the double-loop correction with per-node loading.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise InfeasibleIterateError("barrier direction needs x > 0")
    cfg = _inner_cfg(cfg)
    F = x[:, None] * lp.A.T
    g = x * lp.c - mu
    p = lp.A.shape[0]
    rep = solve_gabp_broadcast(least_squares_embedding(F, g), cfg, allow_zero_diag=True)
    if rep.converged:
        y = rep.x[:p]
    else:
        log.info("GaBP %s on the least-squares embedding; using diagonal loading", rep.status)
        rep = double_loop_solve(make_system(F.T @ F, F.T @ g), LoadingSpec(), cfg, cfg)
        if not rep.converged:
            raise InnerSolveError(f"double-loop correction {rep.status}")
        y = rep.x
    dx = x - x * x * (lp.c - lp.A.T @ y) / mu
    return dx, y


def barrier_central_path(lp, mus, newton_tol=1e-10, max_newton=100, cfg=None, solver="gabp"):
    """Central-path points x(mu) for a decreasing sequence of mu.

    Each point is found by damped Newton from the previous one; ``solver``
    selects GaBP or a dense solve for the direction.
    """
    if lp.x0 is None:
        raise InfeasibleIterateError("a strictly feasible x0 is required")
    x = lp.x0.copy()
    path = []
    for mu in mus:
        for _ in range(max_newton):
            if solver == "gabp":
                dx, _ = barrier_newton_direction(lp, x, mu, cfg)
            else:
                dx, _ = _dense_barrier_direction(lp, x, mu)
            dec = float(dx @ (dx / (x * x))) * mu
            if dec / 2 <= newton_tol:
                break
            neg = dx < 0
            step = min(1.0, 0.99 * np.min(-x[neg] / dx[neg])) if np.any(neg) else 1.0
            x = x + step * dx
        path.append(x.copy())
    return np.array(path)


def _dense_barrier_direction(lp, x, mu):
    X2 = x * x
    y = np.linalg.solve((lp.A * X2) @ lp.A.T, lp.A @ (X2 * lp.c) - mu * lp.A @ x)
    return x - X2 * (lp.c - lp.A.T @ y) / mu, y


def inequality_lp(G, h, c):
    """Standard form of min c^T u s.t. G u <= h, u >= 0, with slacks.

    Returns an LpProblem over (u, s) with [G I] (u, s) = h.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    m, k = G.shape
    return LpProblem(c=np.concatenate([np.asarray(c, dtype=float), np.zeros(m)]),
                     A=np.hstack([G, np.eye(m)]), b=np.asarray(h, dtype=float))


def pd_system(lp, x, y, z, mu):
    """Symmetrized primal-dual Newton system over (dx, dy, dz).

    [[0, A^T, I], [A, 0, 0], [I, 0, Z^-1 X]] with rhs
    [c - A^T y - z; b - A x; mu Z^-1 1 - x].
    """
    p, n = lp.A.shape
    A = sp.csr_matrix(lp.A)
    M = sp.bmat([[None, A.T, sp.identity(n)],
                 [A, sp.csr_matrix((p, p)), None],
                 [sp.identity(n), None, sp.diags(x / z)]], format="csr")
    rhs = np.concatenate([lp.c - lp.A.T @ y - z, lp.b - lp.A @ x, mu / z - x])
    return make_system(M, rhs)


def pd_explicit(lp, x, y, z, mu):
    """Closed-form primal-dual direction via A Z^-1 X A^T."""
    A = lp.A
    d = x / z
    dy = np.linalg.solve((A * d) @ A.T, A @ (d * (lp.c - mu / x - A.T @ y)) + lp.b - A @ x)
    dx = d * (A.T @ dy + mu / x - lp.c + A.T @ y)
    dz = -A.T @ dy + lp.c - A.T @ y - z
    return dx, dy, dz


def primal_dual_step(lp, x, y, z, mu, cfg=None):
    """(dx, dy, dz) by GaBP on the symmetrized primal-dual Newton system."""
    x, y, z = (np.asarray(v, dtype=float) for v in (x, y, z))
    if np.any(x <= 0) or np.any(z <= 0):
        raise InfeasibleIterateError("primal-dual step needs x > 0 and z > 0")
    cfg = _inner_cfg(cfg)
    p, n = lp.A.shape
    rep = solve_gabp(pd_system(lp, x, y, z, mu), cfg, allow_zero_diag=True)
    if not rep.converged:
        raise InnerSolveError(f"GaBP {rep.status} on the primal-dual system")
    dx, dy, dz = rep.x[:n], rep.x[n:n + p], rep.x[n + p:]
    if log.isEnabledFor(logging.DEBUG):
        ex = np.concatenate(pd_explicit(lp, x, y, z, mu))
        log.debug("primal-dual step deviation from explicit formulas: %.3g",
                  np.max(np.abs(rep.x - ex)))
    return dx, dy, dz


@dataclass
class NumProblem:
    """maximize sum_j log f_j subject to R f <= c, f >= 0."""
    R: sp.csr_matrix
    c: np.ndarray

    def __post_init__(self):
        self.R = sp.csr_matrix(self.R, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.R.shape[0] != self.c.shape[0]:
            raise ValueError("R must have one row per link")
        if self.R.nnz and not np.all(np.isin(self.R.data, (0.0, 1.0))):
            raise ValueError("R entries must be 0 or 1")
        if np.any(self.c <= 0):
            raise ValueError("capacities must be positive")
        if np.any(np.diff(self.R.tocsc().indptr) == 0):
            raise ValueError("every flow must cross at least one link")

    @property
    def n(self):
        return self.R.shape[1]

    @property
    def m(self):
        return self.R.shape[0]

    def utility(self, f):
        return float(np.sum(np.log(f)))

    def dual_objective(self, lam):
        """lambda^T c - n - sum_j log(r_j^T lambda)."""
        a = self.R.T @ lam
        if np.any(a <= 0):
            return np.inf
        return float(lam @ self.c - self.n - np.sum(np.log(a)))


def generate_num(n_flows, m_links, route_len_mean=10, seed=42):
    """Random routes with expected length route_len_mean and capacities U[0.1, 1].

    Each entry of R is 1 independently with probability route_len_mean / m;
    a flow left without links gets one uniformly chosen link.
    """
    if n_flows < 1 or m_links < 1:
        raise ValueError("need at least one flow and one link")
    rng = np.random.default_rng(seed)
    prob = min(route_len_mean / m_links, 1.0)
    R = rng.random((m_links, n_flows)) < prob
    empty = np.flatnonzero(~R.any(axis=0))
    R[rng.integers(0, m_links, size=empty.size), empty] = True
    c = rng.uniform(0.1, 1.0, size=m_links)
    return NumProblem(sp.csr_matrix(R.astype(float)), c)


@dataclass
class NumConfig:
    gap_tol: float = 1e-4
    theta: float = 10.0
    ls_alpha: float = 0.01
    ls_beta: float = 0.5
    max_steps: int = 100
    solver: str = "gabp"
    inner: SolverConfig = None

    def __post_init__(self):
        if self.solver not in ("gabp", "direct"):
            raise ValueError(f"unknown inner solver {self.solver!r}")
        if self.inner is None:
            self.inner = SolverConfig(eps=1e-10, max_rounds=5000)


def _residual(prob, f, lam, mu, t):
    s = prob.c - prob.R @ f
    r1 = -1.0 / f + prob.R.T @ lam - mu
    r2 = lam * s - 1.0 / t
    r3 = mu * f - 1.0 / t
    return r1, r2, r3, s


def num_kkt_system(prob, f, lam, mu, t):
    """Reduced symmetric Newton system over (df, dlam).

    Eliminating dmu = F^-1 (-r3 - M df) from the primal-dual equations gives
    [[diag(1/f^2 + mu/f), R^T], [R, -diag(s/lam)]] with rhs
    [-r1 - r3/f; r2/lam].
    """
    r1, r2, r3, s = _residual(prob, f, lam, mu, t)
    K = sp.bmat([[sp.diags(1.0 / f ** 2 + mu / f), prob.R.T],
                 [prob.R, sp.diags(-s / lam)]], format="csr")
    return make_system(K, np.concatenate([-r1 - r3 / f, r2 / lam])), r3


def num_reduced_system(prob, f, lam, mu, t):
    """Positive-definite flow-space form D + R^T diag(lam/s) R after eliminating dlam."""
    sys, _ = num_kkt_system(prob, f, lam, mu, t)
    n = prob.n
    b1, b2 = sys.b[:n], sys.b[n:]
    w = lam / (prob.c - prob.R @ f)
    A = sp.diags(1.0 / f ** 2 + mu / f) + prob.R.T @ sp.diags(w) @ prob.R
    return make_system(A.tocsr(), b1 + prob.R.T @ (w * b2)), w, b2


def _num_direction(prob, f, lam, mu, t, cfg, step):
    """(df, dlam, inner rounds) for one Newton step."""
    n = prob.n
    if cfg.solver == "gabp":
        sys, _ = num_kkt_system(prob, f, lam, mu, t)
        rep = solve_gabp_broadcast(sys, cfg.inner)
        if rep.converged:
            return rep.x[:n], rep.x[n:], rep.rounds
        log.info("GaBP %s at Newton step %d; using diagonal loading", rep.status, step)
    red, w, b2 = num_reduced_system(prob, f, lam, mu, t)
    if cfg.solver == "gabp":
        rep = double_loop_solve(red, LoadingSpec(), cfg.inner, cfg.inner)
        if not rep.converged:
            raise InnerSolveError(f"double-loop correction {rep.status} at Newton step {step}")
        df, inner = rep.x, int(sum(rep.info["inner_rounds"]))
    else:
        df, inner = spla.spsolve(red.to_sparse().tocsc(), red.b), 0
    return df, w * (prob.R @ df - b2), inner


def _max_step(v, dv):
    neg = dv < 0
    return np.min(-v[neg] / dv[neg]) if np.any(neg) else np.inf


def solve_num_pd(prob, cfg=None):
    """Primal-dual interior point for log-utility NUM.

    Returns (f, lambda, mu, gap_trace) where gap_trace rows are
    (step, surrogate gap, inner GaBP rounds). The inner solve is GaBP on the
    reduced symmetric Newton system; if it does not converge the
    positive-definite flow-space form is solved by the double-loop
    correction. ``solver="direct"`` uses a sparse direct solve instead.
    """
    cfg = NumConfig() if cfg is None else cfg
    n, m = prob.n, prob.m
    counts = np.asarray(prob.R.sum(axis=1)).ravel()
    used = counts > 0
    f = np.full(n, 0.9 * np.min(prob.c[used] / counts[used]))
    lam = np.ones(m)
    mu = np.ones(n)
    trace = []
    for step in range(1, cfg.max_steps + 1):
        s = prob.c - prob.R @ f
        gap = float(s @ lam + f @ mu)
        t = cfg.theta * 2 * n / gap
        df, dlam, inner = _num_direction(prob, f, lam, mu, t, cfg, step)
        r1, r2, r3, _ = _residual(prob, f, lam, mu, t)
        dmu = (-r3 - mu * df) / f
        r_norm = np.linalg.norm(np.concatenate([r1, r2, r3]))
        ds = -(prob.R @ df)
        a = min(1.0, 0.99 * min(_max_step(lam, dlam), _max_step(mu, dmu),
                                _max_step(f, df), _max_step(s, ds)))
        while True:
            r_new = np.linalg.norm(np.concatenate(
                _residual(prob, f + a * df, lam + a * dlam, mu + a * dmu, t)[:3]))
            if r_new <= (1 - cfg.ls_alpha * a) * r_norm:
                break
            a *= cfg.ls_beta
            if a < 1e-14:
                raise LineSearchError("residual did not decrease",
                                      dict(f=f, lam=lam, mu=mu, step=step))
        f, lam, mu = f + a * df, lam + a * dlam, mu + a * dmu
        s = prob.c - prob.R @ f
        gap = float(s @ lam + f @ mu)
        log.debug("newton step %d: t=%.3g step=%.3g gap=%.6g", step, t, a, gap)
        trace.append((step, gap, inner))
        r_dual = np.linalg.norm(-1.0 / f + prob.R.T @ lam - mu)
        if gap < cfg.gap_tol and r_dual < cfg.gap_tol:
            break
    return f, lam, mu, np.array(trace).reshape(-1, 3)


def solve_num_dual_decomp(prob, alpha, max_iter=100000, gap_tol=1e-4):
    """Projected subgradient on the dual, lambda initialized to 1.

    f_j = 1 / (r_j^T lambda), lambda := (lambda - alpha (c - R f))_+.
    Returns (f, lambda, gap_trace) with rows (iteration, duality gap) where
    the gap compares the dual objective with the utility of f scaled into
    the feasible set.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    lam = np.ones(prob.m)
    trace = []
    f = None
    for it in range(1, max_iter + 1):
        a = prob.R.T @ lam
        f = 1.0 / np.maximum(a, 1e-12)
        lam = np.maximum(lam - alpha * (prob.c - prob.R @ f), 0.0)
        gap = dual_gap(prob, lam, f)
        trace.append((it, gap))
        if gap < gap_tol:
            break
    return f, lam, np.array(trace).reshape(-1, 2)


def dual_gap(prob, lam, f):
    """Dual objective at lambda minus utility of f scaled to satisfy R f <= c."""
    load = np.max((prob.R @ f) / prob.c)
    f_feas = f / max(load, 1.0)
    return prob.dual_objective(lam) - prob.utility(f_feas)
