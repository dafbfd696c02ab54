"""Aitken delta-squared extrapolation and Steffensen restarting."""
import numpy as np

from .gabp import SolveReport, _safe_residual

GUARD = 1e-14


def aitken(x0, x1, x2):
    """Componentwise x0 - (x1 - x0)^2 / (x2 - 2 x1 + x0).

    Components whose denominator is below 1e-14 (1 + |x2|) keep x2.
    """
    x0, x1, x2 = (np.asarray(v, dtype=float) for v in (x0, x1, x2))
    if not (x0.shape == x1.shape == x2.shape):
        raise ValueError("aitken needs three vectors of the same shape")
    den = x2 - 2.0 * x1 + x0
    ok = np.abs(den) >= GUARD * (1.0 + np.abs(x2))
    safe = np.where(ok, den, 1.0)
    return np.where(ok, x0 - (x1 - x0) ** 2 / safe, x2)


def _report(proc, state, rows, status, rounds, **info):
    x, P = proc.solution(state)
    return SolveReport(x=x, P=P, rounds=rounds, trace=np.array(rows).reshape(-1, 3),
                       status=status, messages_per_round=proc.messages_per_round(),
                       state=state, info=info)


def steffensen(proc, cfg):
    """Steffensen iteration around a single-step process.

    Each cycle runs two steps from the current point, combines the three
    points with ``aitken`` and restarts from the combined point; a cycle
    counts as three iterations (two steps plus the combine).

    Processes whose state can be rebuilt from ``proc.vector`` (stationary
    methods) restart the solver itself and stop on the solver's own change
    metric; an extrapolant with a larger residual than the last iterate is
    discarded in favor of that iterate. For GaBP the messages cannot be
    rebuilt from the marginal means, so the restart applies to the extrapolated sequence: the combined point
    becomes the base of the next Aitken step while message passing runs on
    unchanged, and the run stops when successive combined points differ by
    less than cfg.eps.
    """
    if getattr(proc, "restartable", False):
        return _steffensen_restart(proc, cfg)
    return _steffensen_sequence(proc, cfg)


def _steffensen_restart(proc, cfg):
    state = proc.state0
    rows = []
    rounds = 0
    cycles = 0
    while rounds < cfg.max_rounds:
        pts = [state]
        for _ in range(2):
            new = proc.step(pts[-1])
            rounds += 1
            dmsg = proc.change(pts[-1], new)
            rows.append((rounds, dmsg, _residual(proc, new)))
            pts.append(new)
            if proc.diverged(new):
                return _report(proc, new, rows, "diverged", rounds, cycles=cycles)
            if dmsg < cfg.eps:
                return _report(proc, new, rows, "converged", rounds, cycles=cycles)
        y = aitken(*(proc.vector(p) for p in pts))
        cand = proc.from_vector(y)
        # componentwise extrapolation can overshoot; keep x2 when it is worse
        worse = not _residual(proc, cand) <= _residual(proc, pts[-1])
        state = pts[-1] if worse else cand
        rounds += 1
        cycles += 1
        rows.append((rounds, proc.change(pts[-1], state), _residual(proc, state)))
        if proc.diverged(state):
            return _report(proc, state, rows, "diverged", rounds, cycles=cycles)
    return _report(proc, state, rows, "max_rounds", rounds, cycles=cycles)


def _steffensen_sequence(proc, cfg):
    state = proc.state0
    y = proc.vector(state)
    rows = []
    rounds = 0
    cycles = 0
    while rounds < cfg.max_rounds:
        xs = []
        for _ in range(2):
            new = proc.step(state)
            rounds += 1
            dmsg = proc.change(state, new)
            state = new
            rows.append((rounds, dmsg, _residual(proc, state)))
            if proc.diverged(state):
                return _report(proc, state, rows, "diverged", rounds, cycles=cycles)
            xs.append(proc.vector(state))
        y_new = aitken(y, xs[0], xs[1])
        rounds += 1
        cycles += 1
        d = float(np.max(np.abs(y_new - y))) if y.size else 0.0
        y = y_new
        rows.append((rounds, d, _safe_residual(proc.sys, y)))
        if d < cfg.eps:
            rep = _report(proc, state, rows, "converged", rounds, cycles=cycles)
            rep.x = y
            return rep
    rep = _report(proc, state, rows, "max_rounds", rounds, cycles=cycles)
    rep.x = y
    return rep


def aitken_monitor(proc, cfg):
    """Run the process unchanged and extrapolate its solution sequence.

    The reported solution is the Aitken extrapolant of the last three
    solution vectors; convergence is declared when successive extrapolants
    differ by less than cfg.eps.
    """
    state = proc.state0
    xs = [proc.solution(state)[0]]
    rows = []
    prev = None
    for t in range(1, cfg.max_rounds + 1):
        state = proc.step(state)
        x = proc.solution(state)[0]
        xs = (xs + [x])[-3:]
        if proc.diverged(state):
            return _report(proc, state, rows, "diverged", t)
        if len(xs) < 3:
            rows.append((t, np.inf, _residual(proc, state)))
            continue
        y = aitken(*xs)
        d = np.inf if prev is None else float(np.max(np.abs(y - prev)))
        rows.append((t, d, _safe_residual(proc.sys, y)))
        prev = y
        if d < cfg.eps:
            rep = _report(proc, state, rows, "converged", t)
            rep.x = y
            return rep
    rep = _report(proc, state, rows, "max_rounds", cfg.max_rounds)
    if prev is not None:
        rep.x = prev
    return rep


def _residual(proc, state):
    return _safe_residual(proc.sys, proc.solution(state)[0])
