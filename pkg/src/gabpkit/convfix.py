"""Diagonal loading with iterative correction, forcing GaBP convergence on
positive-definite systems that are not walk-summable."""
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .diagnostics import rho_abs
from .gabp import (MessageState, SolveReport, SolverConfig, broadcast_round, max_change,
                   is_diverged, marginals, solve_gabp_broadcast, _safe_residual)
from .numcore import make_system, normalize_unit_diag, spectral_radius


class InsufficientLoadingError(RuntimeError):
    pass


class NotPositiveDefiniteError(RuntimeError):
    pass


class WalkSummabilityWarning(UserWarning):
    pass


@dataclass
class LoadingSpec:
    """How to pick the diagonal loading Gamma.

    ``scalar_gamma`` loads gamma * diag(A) (gamma * I on the unit-diagonal
    form); when gamma is None it uses gamma_star * (1 + margin).
    ``per_node_gamma_star`` loads the per-node dominance gap times
    (1 + margin). ``custom_diag`` uses ``gamma`` as the loading vector.
    """
    mode: str = "per_node_gamma_star"
    gamma: object = None
    margin: float = 0.1

    def __post_init__(self):
        if self.mode not in ("scalar_gamma", "per_node_gamma_star", "custom_diag"):
            raise ValueError(f"unknown loading mode {self.mode!r}")


def gamma_star(sys):
    """rho(|R|) - 1 for the unit-diagonal form J = I - R."""
    norm = normalize_unit_diag(sys)
    M = abs(norm.offdiag())
    return spectral_radius(M.toarray() if sys.n <= 64 else M) - 1.0


def per_node_gamma_star(sys, margin=0.0):
    """Per-node loading sum_{j != i} |J_ij| - J_ii, clamped at zero, plus margin."""
    gap = np.bincount(sys.src, weights=np.abs(sys.data), minlength=sys.n) - sys.diag
    return np.maximum(gap, 0.0) + margin


def loading_vector(sys, spec):
    if spec.mode == "custom_diag":
        g = np.broadcast_to(np.asarray(spec.gamma, dtype=float), (sys.n,)).copy()
    elif spec.mode == "per_node_gamma_star":
        g = per_node_gamma_star(sys) * (1.0 + spec.margin)
    else:
        gamma = spec.gamma
        if gamma is None:
            gamma = max(gamma_star(sys), 0.0) * (1.0 + spec.margin)
        g = float(gamma) * sys.diag
    if np.any(g < 0):
        raise ValueError("loading must be non-negative")
    return g


def _check_loaded(loaded):
    rho = rho_abs(loaded)
    if not rho < 1:
        raise InsufficientLoadingError(f"loaded system is not walk-summable (rho={rho:.4g})")
    return rho


def double_loop_solve(sys, loading=None, inner_cfg=None, outer_cfg=None, check=True):
    """Iterative correction x <- (J + Gamma)^-1 (h + Gamma x) with GaBP inner solves.

    ``outer_cfg.eps`` (default 1e-3) bounds ||x(t+1) - x(t)||_inf at exit and
    ``inner_cfg.eps`` (default 1e-6) is the inner GaBP threshold. The report
    carries the outer iteration count in ``rounds`` and the inner rounds per
    outer step in ``info["inner_rounds"]``.
    """
    loading = LoadingSpec() if loading is None else loading
    inner_cfg = SolverConfig(eps=1e-6, max_rounds=5000) if inner_cfg is None else inner_cfg
    outer_cfg = SolverConfig(eps=1e-3, max_rounds=1000) if outer_cfg is None else outer_cfg
    g = loading_vector(sys, loading)
    loaded = sys.with_diag(sys.diag + g)
    if check and np.any(g > 0):
        _check_loaded(loaded)
    x = np.zeros(sys.n)
    state = None
    rows, inner_rounds = [], []
    status = "max_rounds"
    prev_err, rising = np.inf, 0
    t = 0
    for t in range(1, outer_cfg.max_rounds + 1):
        rep = solve_gabp_broadcast(loaded.with_b(sys.b + g * x), inner_cfg, state0=state)
        if not rep.converged:
            raise InsufficientLoadingError(f"inner GaBP {rep.status} at outer step {t}")
        state = rep.state
        inner_rounds.append(rep.rounds)
        err = float(np.max(np.abs(rep.x - x)))
        x = rep.x
        rows.append((t, err, _safe_residual(sys, x)))
        if err < outer_cfg.eps or not np.any(g > 0):
            status = "converged"
            break
        rising = rising + 1 if err > prev_err else 0
        prev_err = err
        if rising >= 5:
            raise NotPositiveDefiniteError(
                "outer correction error grew for 5 consecutive steps; J may not be positive definite")
    return SolveReport(x=x, P=marginals(loaded, state)[1] - g, rounds=t,
                       trace=np.array(rows).reshape(-1, 3), status=status,
                       messages_per_round=sys.n, state=state,
                       info={"inner_rounds": inner_rounds, "loading": g})


def single_loop_solve(sys, loading=None, s=0.5, cfg=None, check=True):
    """Damped correction with one GaBP round per update of the loaded rhs.

    h(t) = (1 - s) h(t-1) + s (h + Gamma x(t)). Stops when both the message
    change and ||x(t) - x(t-1)||_inf fall below cfg.eps.
    """
    if not 0 < s <= 1:
        raise ValueError("step s must lie in (0, 1]")
    loading = LoadingSpec() if loading is None else loading
    cfg = SolverConfig(eps=1e-6, max_rounds=20000) if cfg is None else cfg
    g = loading_vector(sys, loading)
    loaded = sys.with_diag(sys.diag + g)
    if check and np.any(g > 0):
        _check_loaded(loaded)
    h_t = sys.b.copy()
    state = MessageState.zeros(sys)
    x = marginals(loaded.with_b(h_t), state)[0]
    rows = []
    status = "max_rounds"
    t = 0
    for t in range(1, cfg.max_rounds + 1):
        new, _ = broadcast_round(loaded.with_b(h_t), state, cfg.schedule
                                 if cfg.schedule == "parallel" else "serial")
        dmsg = max_change(state, new, cfg.metric)
        state = new
        x_new = marginals(loaded.with_b(h_t), state)[0]
        dx = float(np.max(np.abs(x_new - x)))
        x = x_new
        rows.append((t, max(dmsg, dx), _safe_residual(sys, x)))
        if is_diverged(state, cfg.metric):
            status = "diverged"
            break
        if dmsg < cfg.eps and dx < cfg.eps:
            status = "converged"
            break
        h_t = (1.0 - s) * h_t + s * (sys.b + g * x)
    return SolveReport(x=x, P=marginals(loaded, state)[1] - g, rounds=t,
                       trace=np.array(rows).reshape(-1, 3), status=status,
                       messages_per_round=sys.n, state=state, info={"loading": g})


def ls_system(Jt, h, gamma):
    """Symmetric [[I_k, J^T], [J, -gamma I_n]] with rhs [0; h]."""
    Jt = sp.csr_matrix(Jt, dtype=float)
    n, k = Jt.shape
    h = np.asarray(h, dtype=float)
    if h.shape != (n,):
        raise ValueError(f"h has shape {h.shape}, expected ({n},)")
    M = sp.bmat([[sp.identity(k), Jt.T], [Jt, -gamma * sp.identity(n)]], format="csr")
    return make_system(M, np.concatenate([np.zeros(k), h]))


def ls_walk_rho(Jt, gamma):
    """rho(|J_hat - sign(diag)|) after scaling J_hat by |diag|^-1/2."""
    A = np.abs(Jt.toarray() if sp.issparse(Jt) else np.asarray(Jt, dtype=float))
    return float(np.linalg.norm(A, 2) / np.sqrt(gamma))


def ls_convfix(Jt, h, gamma, cfg=None, loading=None):
    """Regularized least squares (J^T J + gamma I)^-1 J^T h without forming J^T J.

    GaBP runs on the sign-indefinite augmented system; when ``loading`` is
    given the double-loop correction wraps it. A WalkSummabilityWarning is
    issued when the rescaled augmented matrix is not walk-summable, since
    convergence is then not guaranteed.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    cfg = SolverConfig(eps=1e-9, max_rounds=5000) if cfg is None else cfg
    k = (Jt.shape[1])
    aug = ls_system(Jt, h, gamma)
    rho = ls_walk_rho(Jt, gamma)
    if not rho < 1:
        warnings.warn(f"augmented system is not walk-summable (rho={rho:.4g})",
                      WalkSummabilityWarning, stacklevel=2)
    if loading is None:
        rep = solve_gabp_broadcast(aug, cfg)
    else:
        rep = double_loop_solve(aug, loading, cfg, SolverConfig(eps=cfg.eps, max_rounds=cfg.max_rounds),
                                check=False)
    if not rep.converged:
        raise InsufficientLoadingError(f"GaBP on the augmented system {rep.status}")
    return rep.x[:k]
