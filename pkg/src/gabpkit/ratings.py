"""Quadratic rating costs on graphs and their named instances, each reduced to
a symmetric linear solve.

The cost is E(x) = sum_i w_ii (x_i - y_i)^2 + beta sum_{i<j} w_ij (x_i - x_j)^2
over undirected edges, with stationarity (diag(w_ii [y_i known]) + beta L_w) x
= diag(w_ii) y.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .convfix import LoadingSpec, double_loop_solve
from .gabp import SolverConfig, solve_gabp_broadcast
from .numcore import WeightedGraph, make_system, weighted_laplacian


class DegenerateProblemError(ValueError):
    pass


class DisconnectedGraphError(ValueError):
    pass


class RatingSolveError(RuntimeError):
    pass


class AsymmetricTrustWarning(UserWarning):
    pass


@dataclass
class RatingProblem:
    """Graph, tradeoff beta, priors (NaN = no prior) and node weights w_ii."""
    graph: WeightedGraph
    beta: float
    y: np.ndarray = None
    node_weights: np.ndarray = None
    symmetrized: bool = field(default=False, init=False)

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        n = self.graph.n
        y = self.graph.y if self.y is None else self.y
        w = self.graph.node_weights if self.node_weights is None else self.node_weights
        self.y = np.zeros(n) if y is None else np.asarray(y, dtype=float).reshape(-1)
        self.node_weights = np.ones(n) if w is None else np.asarray(w, dtype=float).reshape(-1)
        if self.y.shape != (n,) or self.node_weights.shape != (n,):
            raise ValueError("priors and node weights need one entry per node")
        if np.any(self.node_weights < 0):
            raise ValueError("node weights must be non-negative")


def _symmetric_weights(W):
    """(W + W^T)/2 and whether the input needed it."""
    asym = abs(W - W.T)
    if asym.nnz and asym.max() > 1e-12 * max(abs(W).max(), 1.0):
        return ((W + W.T) / 2).tocsr(), True
    return W, False


def assemble_rating_system(p):
    """(diag(w_ii [y_i known]) + beta L_w) x = diag(w_ii) y, nulls omitted."""
    W, flag = _symmetric_weights(p.graph.W)
    if flag:
        warnings.warn("asymmetric trust weights symmetrized as (W + W^T)/2",
                      AsymmetricTrustWarning, stacklevel=2)
    p.symmetrized = flag
    known = ~np.isnan(p.y)
    mass = np.where(known, p.node_weights, 0.0)
    if p.beta == 0 and np.any(mass == 0):
        raise DegenerateProblemError("beta = 0 leaves nodes without a prior undetermined")
    if not np.any(mass > 0):
        raise DegenerateProblemError("no node carries a prior")
    L = weighted_laplacian(WeightedGraph(W))
    A = sp.diags(mass) + p.beta * L
    return make_system(A, mass * np.where(known, p.y, 0.0))


def _gabp(sys, cfg):
    cfg = SolverConfig(eps=1e-10, max_rounds=10000) if cfg is None else cfg
    rep = solve_gabp_broadcast(sys, cfg)
    if not rep.converged:
        raise RatingSolveError(f"GaBP {rep.status}; consider the diagonal-loading fix")
    return rep


def rate(p, cfg=None, return_report=False):
    """Minimizer of the rating cost by GaBP."""
    rep = _gabp(assemble_rating_system(p), cfg)
    return (rep.x, rep) if return_report else rep.x


def _solve_general(J, b, cfg):
    """GaBP solve of J x = b.

    Non-symmetric J goes through the positive-definite J^T J x = J^T b with
    the double-loop correction, since J^T J adds loops on which plain GaBP
    may diverge. Returns (x, report) with report.info["symmetrized"] set.
    """
    J = sp.csr_matrix(J, dtype=float)
    _, flag = _symmetric_weights(J)
    if flag:
        inner = SolverConfig(eps=1e-10, max_rounds=10000) if cfg is None else cfg
        rep = double_loop_solve(make_system((J.T @ J).tocsr(), J.T @ b), LoadingSpec(),
                                inner, SolverConfig(eps=inner.eps, max_rounds=inner.max_rounds))
        if not rep.converged:
            raise RatingSolveError(f"double-loop correction {rep.status}")
    else:
        rep = _gabp(make_system(J, b), cfg)
    rep.info["symmetrized"] = flag
    return rep.x, rep


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")


def _check_substochastic(R):
    R = sp.csr_matrix(R, dtype=float)
    if R.nnz and R.data.min() < 0:
        raise ValueError("transition entries must be non-negative")
    if np.any(np.asarray(R.sum(axis=1)).ravel() > 1 + 1e-8):
        raise ValueError("row sums must not exceed 1")
    return R


def spatial_rank(R, alpha, cfg=None, return_report=False):
    """x = (I - alpha R)^-1 1 for a row-(sub)stochastic trust matrix R."""
    _check_alpha(alpha)
    R = _check_substochastic(R)
    n = R.shape[0]
    x, rep = _solve_general(sp.identity(n) - alpha * R, np.ones(n), cfg)
    return (x, rep) if return_report else x


def fundamental_diagonal(R, alpha, cfg=None):
    """P_ii of the fundamental matrix (I - alpha R)^-1, one GaBP solve per node.

    P_ii weighs the random walks that start and end at node i, the quantity
    used as node i's own importance.
    """
    _check_alpha(alpha)
    R = _check_substochastic(R)
    n = R.shape[0]
    J = sp.identity(n, format="csr") - alpha * R
    out = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        out[i] = _solve_general(J, e, cfg)[0][i]
    return out


def personalized_pagerank(M, prior, alpha, cfg=None, return_report=False):
    """PR = (1 - alpha)(I - alpha M)^-1 x for column-stochastic M."""
    _check_alpha(alpha)
    M = sp.csr_matrix(M, dtype=float)
    if M.nnz and M.data.min() < 0:
        raise ValueError("transition entries must be non-negative")
    if np.max(np.abs(np.asarray(M.sum(axis=0)).ravel() - 1.0)) > 1e-8:
        raise ValueError("M must be column stochastic")
    n = M.shape[0]
    x, rep = _solve_general(sp.identity(n) - alpha * M, np.asarray(prior, dtype=float), cfg)
    pr = (1.0 - alpha) * x
    return (pr, rep) if return_report else pr


def _check_connected(W):
    if connected_components(W, directed=False)[0] != 1:
        raise DisconnectedGraphError("graph must be connected")


def eigen_projection(g, cfg=None, b=None):
    """Minimum-norm solution of L x = b (b = 1 by default), orthogonal to 1.

    The constant component of b is outside the range of L and is dropped;
    the remainder is solved on the Laplacian grounded at node 0, which keeps
    the graph sparse, then projected. For b = 1 the result is the zero vector.
    """
    W, _ = _symmetric_weights(g.W)
    _check_connected(W)
    n = g.n
    b = np.ones(n) if b is None else np.asarray(b, dtype=float)
    b = b - b.mean()
    if n == 1 or not np.any(b):
        return np.zeros(n)
    L = weighted_laplacian(WeightedGraph(W))
    rep = _gabp(make_system(L[1:, 1:], b[1:]), cfg)
    x = np.concatenate([[0.0], rep.x])
    return x - x.mean()


def eigen_projection_cost(g, cfg=None):
    """Minimizer of sum_i (x_i - 1)^2 + 1/2 sum_edges (x_i - x_j)^2, i.e. (I + L/2) x = 1."""
    W, _ = _symmetric_weights(g.W)
    p = RatingProblem(WeightedGraph(W), beta=0.5, y=np.ones(g.n), node_weights=np.ones(g.n))
    return rate(p, cfg)
