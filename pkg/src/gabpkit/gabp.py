"""Gaussian belief propagation for symmetric linear systems A x = b.

Messages live on directed edges in the CSR order of ``SymmetricSystem``:
entry ``e`` of ``P``/``mu`` is the message from ``src[e]`` to ``indices[e]``.
Node potentials are kept in information form (P_ii = A_ii, P_ii mu_ii = b_i)
so that nodes with a zero diagonal can still take part.
"""
import functools
from dataclasses import dataclass, field, replace

import numpy as np

from .numcore import residual_per_equation

DIVERGENCE_LIMIT = 1e12


class SingularSubgraphError(ZeroDivisionError):
    def __init__(self, i, j):
        super().__init__(f"zero cavity precision on message {i}->{j}")
        self.edge = (i, j)


class ZeroDiagonalError(ValueError):
    def __init__(self, i):
        super().__init__(f"A[{i},{i}] is zero")
        self.index = i


@dataclass
class MessageState:
    """Precision and mean of every directed message."""
    P: np.ndarray
    mu: np.ndarray

    @classmethod
    def zeros(cls, sys):
        return cls(np.zeros(sys.n_edges), np.zeros(sys.n_edges))

    def copy(self):
        return MessageState(self.P.copy(), self.mu.copy())


@dataclass
class SolverConfig:
    schedule: str = "parallel"
    eps: float = 1e-6
    max_rounds: int = 1000
    accel: str = "none"
    metric: str = "mean"

    def __post_init__(self):
        if self.schedule not in ("serial", "parallel"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if self.accel not in ("none", "aitken", "steffensen"):
            raise ValueError(f"unknown acceleration {self.accel!r}")
        if self.metric not in ("mean", "info"):
            raise ValueError(f"unknown message metric {self.metric!r}")


@dataclass
class SolveReport:
    """Outcome of an iterative solve.

    ``trace`` is an array with columns (round, max_dmsg, residual).
    """
    x: np.ndarray
    P: np.ndarray
    rounds: int
    trace: np.ndarray
    status: str
    messages_per_round: int = 0
    state: object = field(default=None, repr=False)
    info: dict = field(default_factory=dict)

    @property
    def converged(self):
        return self.status == "converged"


def node_fixes(sys):
    """Return (P_ii, mu_ii); mu_ii is NaN where A_ii is zero."""
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(sys.diag != 0, sys.b / sys.diag, np.nan)
    return sys.diag.copy(), mu


def marginals(sys, state):
    """Marginal means and precisions from the current incoming messages."""
    Pin = np.bincount(sys.indices, weights=state.P, minlength=sys.n)
    hin = np.bincount(sys.indices, weights=state.P * state.mu, minlength=sys.n)
    Pi = sys.diag + Pin
    with np.errstate(divide="ignore", invalid="ignore"):
        x = (sys.b + hin) / Pi
    return x, Pi


def _emit(sys, i, j_pos, Pcav, hcav, P_old, mu_old, allow_zero_diag, untouched):
    """Messages out of node i given cavity quantities (vectors over out-edges)."""
    a = sys.data[j_pos]
    zero = Pcav == 0
    if np.any(zero):
        bad = zero & ~((sys.diag[i] == 0) & untouched) if allow_zero_diag else zero
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise SingularSubgraphError(int(i), int(sys.indices[j_pos][k]))
    with np.errstate(divide="ignore", invalid="ignore"):
        P_new = np.where(zero, P_old, -a * a / Pcav)
        mu_new = np.where(zero, mu_old, hcav / a)
    return P_new, mu_new


@functools.lru_cache(maxsize=256)
def _exclusion_mask(d):
    # row j sums every incoming message except the one from the j-th neighbour
    return 1.0 - np.eye(d)


def gabp_round(sys, state, schedule="parallel", allow_zero_diag=False):
    """One round of naive message passing with explicit exclusion sums over N(i)\\j."""
    P_read, mu_read = state.P, state.mu
    if schedule == "parallel":
        out = MessageState(state.P.copy(), state.mu.copy())
    elif schedule == "serial":
        out = state.copy()
        P_read, mu_read = out.P, out.mu
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    for i in range(sys.n):
        lo, hi = sys.indptr[i], sys.indptr[i + 1]
        d = hi - lo
        if d == 0:
            continue
        inc = sys.rev[lo:hi]
        Pin = P_read[inc]
        hin = Pin * mu_read[inc]
        mask = _exclusion_mask(d)
        Pcav = sys.diag[i] + mask @ Pin
        hcav = sys.b[i] + mask @ hin
        untouched = (mask @ (Pin != 0)) == 0 if allow_zero_diag else None
        out.P[lo:hi], out.mu[lo:hi] = _emit(
            sys, i, slice(lo, hi), Pcav, hcav, state.P[lo:hi], state.mu[lo:hi],
            allow_zero_diag, untouched)
    return out


def broadcast_round(sys, state, schedule="parallel", allow_zero_diag=False):
    """One broadcast round: nodes broadcast aggregates, peers subtract.

    Returns (state', aggregates) where aggregates = (P_tilde, h_tilde), the
    only n quantities each node emits per round.
    """
    if schedule == "parallel":
        P, mu = state.P, state.mu
        Ptil = sys.diag + np.bincount(sys.indices, weights=P, minlength=sys.n)
        htil = sys.b + np.bincount(sys.indices, weights=P * mu, minlength=sys.n)
        nz_in = np.bincount(sys.indices, weights=(P != 0).astype(float), minlength=sys.n)
        src, r = sys.src, sys.rev
        Pcav = Ptil[src] - P[r]
        hcav = htil[src] - P[r] * mu[r]
        untouched = (nz_in[src] - (P[r] != 0)) == 0
        zero = Pcav == 0
        if np.any(zero):
            bad = zero & ~(allow_zero_diag & (sys.diag[src] == 0) & untouched)
            if np.any(bad):
                e = int(np.flatnonzero(bad)[0])
                raise SingularSubgraphError(int(src[e]), int(sys.indices[e]))
        a = sys.data
        with np.errstate(divide="ignore", invalid="ignore"):
            P_new = np.where(zero, P, -a * a / Pcav)
            mu_new = np.where(zero, mu, hcav / a)
        return MessageState(P_new, mu_new), (Ptil, htil)
    if schedule != "serial":
        raise ValueError(f"unknown schedule {schedule!r}")
    out = state.copy()
    Ptil = np.empty(sys.n)
    htil = np.empty(sys.n)
    for i in range(sys.n):
        lo, hi = sys.indptr[i], sys.indptr[i + 1]
        inc = sys.rev[lo:hi]
        Pin = out.P[inc]
        hin = Pin * out.mu[inc]
        Ptil[i] = sys.diag[i] + Pin.sum()
        htil[i] = sys.b[i] + hin.sum()
        if hi == lo:
            continue
        Pcav = Ptil[i] - Pin
        hcav = htil[i] - hin
        untouched = (np.count_nonzero(Pin) - (Pin != 0)) == 0
        pos = np.arange(lo, hi)
        out.P[lo:hi], out.mu[lo:hi] = _emit(
            sys, i, pos, Pcav, hcav, out.P[lo:hi], out.mu[lo:hi],
            allow_zero_diag, untouched)
    return out, (Ptil, htil)


def maxproduct_round(sys, state, schedule="parallel"):
    """Round computed by the max-product rule in derivative-set-to-zero form.

    Node i maximizes its cavity Gaussian times the pairwise potential over x_i
    given x_j; the maximizer is affine in x_j,
    x_i* = (P_{i\\j} mu_{i\\j} - A_ij x_j) / P_{i\\j}, and substituting it back
    gives the quadratic and linear coefficients of the message in x_j.
    """
    out = state.copy()
    P_read = state.P if schedule == "parallel" else out.P
    mu_read = state.mu if schedule == "parallel" else out.mu
    for i in range(sys.n):
        nbrs, vals = sys.neighbors(i)
        lo = sys.indptr[i]
        inc = sys.rev[lo:lo + len(nbrs)]
        for m, (j, a) in enumerate(zip(nbrs, vals)):
            others = [k for k in range(len(nbrs)) if k != m]
            p_cav = sys.diag[i] + sum(P_read[inc[k]] for k in others)
            h_cav = sys.b[i] + sum(P_read[inc[k]] * mu_read[inc[k]] for k in others)
            if p_cav == 0:
                raise SingularSubgraphError(i, int(j))
            mu_cav = h_cav / p_cav
            # log-potential in (x_i, x_j): -p/2 x_i^2 + p mu x_i - a x_i x_j;
            # d/dx_i = 0 gives x_i* = mu_cav - (a/p) x_j
            slope = -a / p_cav
            intercept = mu_cav
            # value at x_i*: p/2 x_i*^2 - ... collect x_j^2 and x_j terms
            quad = -0.5 * p_cav * slope ** 2 - a * slope
            lin = -p_cav * intercept * slope + p_cav * mu_cav * slope - a * intercept
            # message exp(quad x_j^2 + lin x_j) = exp(-P/2 x_j^2 + P m x_j)
            P_msg = -2.0 * quad
            out.P[lo + m] = P_msg
            out.mu[lo + m] = lin / P_msg
    return out


def jacobi_reduced_round(sys, state):
    """GaBP round with precision messages forced to zero and sums over all of N(i).

    With every P_ij = 0 the mean messages carry P_ki mu_ki as a plain number;
    this variant stores that product directly in ``mu`` and leaves ``P`` zero.
    The implied marginal is x_i = (b_i - sum_k A_ik x_k) / A_ii.
    """
    x = reduced_means(sys, state)
    mu_new = -sys.data * x[sys.src]
    return MessageState(np.zeros_like(state.P), mu_new)


def reduced_means(sys, state):
    agg = np.bincount(sys.indices, weights=state.mu, minlength=sys.n)
    return (sys.b + agg) / sys.diag


def _check_diag(sys, allow_zero_diag):
    if allow_zero_diag:
        return
    zero = np.flatnonzero(sys.diag == 0)
    if zero.size:
        raise ZeroDiagonalError(int(zero[0]))


def _second(state, metric):
    # mean-form messages divide by A_ij; the info form P*mu does not
    return state.mu if metric == "mean" else state.P * state.mu


def max_change(old, new, metric="mean"):
    """Max over messages of |dP| and |d mu| (or |d(P mu)| for metric="info")."""
    if old.P.size == 0:
        return 0.0
    return float(max(np.max(np.abs(new.P - old.P)),
                     np.max(np.abs(_second(new, metric) - _second(old, metric)))))


def is_diverged(state, metric="mean"):
    if not (np.all(np.isfinite(state.mu)) and np.all(np.isfinite(state.P))):
        return True
    if state.mu.size == 0:
        return False
    if metric == "mean":
        return np.max(np.abs(state.mu)) > DIVERGENCE_LIMIT
    return max(np.max(np.abs(state.P)), np.max(np.abs(state.P * state.mu))) > DIVERGENCE_LIMIT


class GabpProcess:
    """Single-step interface used by the generic iteration and acceleration loops."""

    def __init__(self, sys, schedule, broadcast=False, allow_zero_diag=False, state0=None,
                 metric="mean"):
        self.sys = sys
        self.metric = metric
        self.schedule = schedule
        self.broadcast = broadcast
        self.allow_zero_diag = allow_zero_diag
        self.state0 = MessageState.zeros(sys) if state0 is None else state0.copy()

    def step(self, state):
        if self.broadcast:
            return broadcast_round(self.sys, state, self.schedule, self.allow_zero_diag)[0]
        return gabp_round(self.sys, state, self.schedule, self.allow_zero_diag)

    def change(self, old, new):
        return max_change(old, new, self.metric)

    def diverged(self, state):
        return is_diverged(state, self.metric)

    def solution(self, state):
        return marginals(self.sys, state)

    def vector(self, state):
        return marginals(self.sys, state)[0]


    def messages_per_round(self):
        return self.sys.n if self.broadcast else self.sys.n_edges


def run_process(proc, cfg, sys=None):
    """Iterate proc.step until the change metric drops below cfg.eps."""
    sys = proc.sys if sys is None else sys
    state = proc.state0
    rows = []
    status = "max_rounds"
    rounds = 0
    for t in range(1, cfg.max_rounds + 1):
        new = proc.step(state)
        rounds = t
        dmsg = proc.change(state, new)
        state = new
        x, _ = proc.solution(state)
        rows.append((t, dmsg, _safe_residual(sys, x)))
        if proc.diverged(state):
            status = "diverged"
            break
        if dmsg < cfg.eps:
            status = "converged"
            break
    x, P = proc.solution(state)
    return SolveReport(x=x, P=P, rounds=rounds, trace=np.array(rows).reshape(-1, 3),
                       status=status, messages_per_round=proc.messages_per_round(),
                       state=state)


def _safe_residual(sys, x):
    if not np.all(np.isfinite(x)):
        return np.inf
    with np.errstate(over="ignore", invalid="ignore"):
        return residual_per_equation(sys, x)


def has_deferred(sys, state):
    """True when some message still has a zero cavity precision."""
    if sys.n_edges == 0:
        return False
    Ptil = sys.diag + np.bincount(sys.indices, weights=state.P, minlength=sys.n)
    return bool(np.any(Ptil[sys.src] - state.P[sys.rev] == 0))


def _solve(sys, cfg, broadcast, allow_zero_diag, state0):
    cfg = SolverConfig() if cfg is None else cfg
    _check_diag(sys, allow_zero_diag)
    proc = GabpProcess(sys, cfg.schedule, broadcast, allow_zero_diag, state0, cfg.metric)
    if cfg.accel == "none":
        rep = run_process(proc, cfg)
    else:
        from . import accel
        rep = accel.steffensen(proc, cfg) if cfg.accel == "steffensen" else accel.aitken_monitor(proc, cfg)
    # a zero-diagonal node that never hears from a neighbor stalls silently
    if allow_zero_diag and rep.converged and has_deferred(sys, rep.state):
        rep.status = "singular"
    return rep


def solve_gabp(sys, cfg=None, allow_zero_diag=False, state0=None):
    """Solve A x = b by naive message passing.

    The report carries marginal means ``x`` and precisions ``P``. Zero
    diagonal entries are rejected unless ``allow_zero_diag`` is set, in which
    case messages out of such a node are deferred until it has heard from a
    neighbor.
    """
    return _solve(sys, cfg, False, allow_zero_diag, state0)


def solve_gabp_broadcast(sys, cfg=None, allow_zero_diag=False, state0=None):
    """Solve A x = b in broadcast form (one aggregate per node per round)."""
    return _solve(sys, cfg, True, allow_zero_diag, state0)


def write_trace_csv(report, path):
    np.savetxt(path, report.trace, delimiter=",", header="round,max_dmsg,residual",
               comments="", fmt=["%d", "%.17g", "%.17g"])


def with_schedule(cfg, schedule):
    return replace(cfg, schedule=schedule)
