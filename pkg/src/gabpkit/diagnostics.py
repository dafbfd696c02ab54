"""Sufficient convergence conditions for GaBP and the rate bound."""
import math
from dataclasses import dataclass

import numpy as np

from .numcore import DominanceClass, dominance_class, normalize_unit_diag, spectral_radius


@dataclass
class ConvergenceReport:
    strict_dd: bool
    rho_abs: float
    walk_summable: bool
    gamma: float = None
    bound_rounds: int = None

    def as_lines(self):
        def fmt(v):
            return "none" if v is None else repr(v)
        return [f"strict_dd={self.strict_dd}", f"rho_abs={self.rho_abs!r}",
                f"walk_summable={self.walk_summable}", f"gamma={fmt(self.gamma)}",
                f"bound_rounds={fmt(self.bound_rounds)}"]


def rho_abs(sys):
    """rho(|I - A_norm|) for the unit-diagonal normalization of A."""
    norm = normalize_unit_diag(sys)
    M = abs(norm.offdiag())
    return spectral_radius(M.toarray() if sys.n <= 64 else M)


def rate_gamma(sys):
    """max_{i,j} 1 / (1 + eps_i / (|a_ij| |N(i)|)) with eps_i = |a_ii| - sum_j |a_ij|.

    Returns None when A is not strictly diagonally dominant or has no edges.
    """
    if sys.n_edges == 0:
        return None
    absval = np.abs(sys.data)
    src = sys.src
    eps_i = np.abs(sys.diag) - np.bincount(src, weights=absval, minlength=sys.n)
    if np.any(eps_i <= 0):
        return None
    deg = np.diff(sys.indptr)
    return float(np.max(1.0 / (1.0 + eps_i[src] / (absval * deg[src]))))


def bound_rounds(gamma, eps):
    """Rounds t = ceil(log eps / log gamma) needed for accuracy eps."""
    if not (0 < gamma < 1 and 0 < eps < 1):
        raise ValueError("bound_rounds needs 0 < gamma < 1 and 0 < eps < 1")
    return int(math.ceil(math.log(eps) / math.log(gamma) - 1e-12))


def check_conditions(sys, eps=1e-6):
    """Diagonal dominance, walk-summability and, when available, the rate bound."""
    strict = dominance_class(sys) == DominanceClass.STRICT
    rho = rho_abs(sys)
    gamma = rate_gamma(sys) if strict else None
    if sys.n_edges == 0:
        rounds = 1
    elif gamma is not None:
        rounds = bound_rounds(gamma, eps)
    else:
        rounds = None
    return ConvergenceReport(strict_dd=strict, rho_abs=rho, walk_summable=bool(rho < 1),
                             gamma=gamma, bound_rounds=rounds)
