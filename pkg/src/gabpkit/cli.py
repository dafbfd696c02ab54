"""Command-line front end.

Exit codes: 0 success, 1 solver failure, 2 usage error (bad flags or
unreadable input). Trace CSVs are written under $GABP_TRACE_DIR when set.

CSV schemas:
  solve trace        round,max_dmsg,residual ($GABP_TRACE_DIR/solve_trace.csv)
  fix                outer,max_dx,residual,inner_rounds
  poisson            i,j,u
  cdma-demo          user,bit,detected,x
  krr                index,prediction
  rate               node,rating
  kalman-demo        step,p_diff_inf,x_diff_inf
  num                step,gap,inner_iters
  tables             table,system,method,iterations,status,target,tol,pass
"""
import argparse
import csv
import logging
import os
import sys

import numpy as np

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


def _fmt(v):
    return f"{v:.17g}"


def _vec(v):
    return "[" + ",".join(f"{x:.10g}" for x in np.asarray(v).ravel()) + "]"


def _trace_path(name):
    d = os.environ.get("GABP_TRACE_DIR")
    if not d:
        return None
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, name)


def _write_rows(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _out(args):
    return open(args.out, "w") if getattr(args, "out", None) else None


def _emit(args, header, rows):
    fh = _out(args)
    try:
        _write_rows(fh or sys.stdout, header, rows)
    finally:
        if fh:
            fh.close()


def _read_system(a_path, b_path):
    from .numcore import MatrixMarketError, read_matrix_market
    try:
        return read_matrix_market(a_path, b_path)
    except (OSError, MatrixMarketError) as err:
        raise UsageError(str(err)) from err


def _read_dense(path):
    from .numcore import MatrixMarketError, _read_mtx
    try:
        M = _read_mtx(path)
    except (OSError, MatrixMarketError) as err:
        raise UsageError(str(err)) from err
    return M.toarray() if hasattr(M, "toarray") else np.asarray(M, dtype=float)


def _print_report(rep):
    print(f"status={rep.status}")
    print(f"rounds={rep.rounds}")
    print(f"x={_vec(rep.x)}")
    if rep.P is not None:
        print(f"P={_vec(rep.P)}")
    if len(rep.trace):
        print(f"residual={rep.trace[-1, 2]:.6g}")


def _save_trace(rep, name):
    path = _trace_path(name)
    if path:
        from .gabp import write_trace_csv
        write_trace_csv(rep, path)


def cmd_solve(args):
    from .gabp import SolverConfig, solve_gabp, solve_gabp_broadcast
    from .stationary import StationaryConfig, optimal_sor_omega, solve_stationary
    s = _read_system(args.A, args.b)
    if args.method in ("gabp", "broadcast"):
        cfg = SolverConfig(schedule=args.schedule, eps=args.eps, max_rounds=args.max_rounds,
                           accel=args.accel)
        solver = solve_gabp if args.method == "gabp" else solve_gabp_broadcast
        rep = solver(s, cfg)
    else:
        omega = args.omega
        if args.method == "sor" and omega is None:
            omega = optimal_sor_omega(s, args.eps)
        cfg = StationaryConfig(args.method, omega or 1.0, eps=args.eps,
                               max_rounds=args.max_rounds)
        rep = solve_stationary(s, cfg, accel=args.accel)
    _print_report(rep)
    _save_trace(rep, "solve_trace.csv")
    return 0 if rep.converged else 1


def cmd_diagnose(args):
    from .diagnostics import check_conditions
    s = _read_system(args.A, None)
    for line in check_conditions(s, args.eps).as_lines():
        print(line)
    return 0


def cmd_fix(args):
    from .convfix import LoadingSpec, double_loop_solve, single_loop_solve
    from .gabp import SolverConfig
    s = _read_system(args.A, args.b)
    spec = LoadingSpec(mode=args.mode, gamma=args.gamma, margin=args.margin)
    if args.step_s is None:
        rep = double_loop_solve(s, spec, SolverConfig(eps=args.inner_eps, max_rounds=5000),
                                SolverConfig(eps=args.eps, max_rounds=args.max_rounds))
        inner = rep.info["inner_rounds"]
    else:
        rep = single_loop_solve(s, spec, args.step_s,
                                SolverConfig(eps=args.eps, max_rounds=args.max_rounds))
        inner = [1] * rep.rounds
    rows = [(int(t), dx, res, k) for (t, dx, res), k in zip(rep.trace, inner)]
    _emit(args, ["outer", "max_dx", "residual", "inner_rounds"], rows)
    print(f"status={rep.status} x={_vec(rep.x)}", file=sys.stderr)
    return 0 if rep.converged else 1


def cmd_poisson(args):
    from .gabp import SolverConfig, solve_gabp
    from .numcore import poisson2d
    rep = solve_gabp(poisson2d(args.p), SolverConfig(schedule=args.schedule, eps=args.eps,
                                                      max_rounds=args.max_rounds))
    u = rep.x.reshape(args.p, args.p)
    rows = [(i, j, float(u[i, j])) for i in range(args.p) for j in range(args.p)]
    _emit(args, ["i", "j", "u"], rows)
    print(f"status={rep.status} rounds={rep.rounds}", file=sys.stderr)
    return 0 if rep.converged else 1


def cmd_cdma(args):
    from .convfix import LoadingSpec
    from .detect import DetectionError, mmse_detect, random_cdma
    rng = np.random.default_rng(args.seed)
    if args.S:
        S = _read_dense(args.S)
        bits = rng.choice([-1.0, 1.0], size=S.shape[1])
        y = S @ bits + np.sqrt(args.sigma2) * rng.standard_normal(S.shape[0])
    else:
        S, bits, y = random_cdma(args.n, args.k, args.sigma2, rng)
    fix = LoadingSpec() if args.fix else None
    try:
        x = mmse_detect(S, y, args.sigma2 * np.ones(S.shape[0]), fix=fix)
    except DetectionError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    rows = [(u, int(b), int(np.sign(v) or 1), float(v)) for u, (b, v) in enumerate(zip(bits, x))]
    _emit(args, ["user", "bit", "detected", "x"], rows)
    errors = int(np.sum(np.where(x >= 0, 1, -1) != bits))
    print(f"bit_errors={errors}", file=sys.stderr)
    return 0


def _read_table(path):
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=","))
    except (OSError, ValueError) as err:
        raise UsageError(f"{path}: {err}") from err


def cmd_krr(args):
    from .convfix import LoadingSpec
    from .detect import DetectionError, krr_predict, krr_solve
    rng = np.random.default_rng(args.seed)
    if args.data:
        D = _read_table(args.data)
        X, y = D[:, :-1], D[:, -1]
    else:
        X = rng.uniform(-1, 1, size=(args.n, 2))
        y = np.sign(X[:, 0] * X[:, 1] + 0.1 * rng.standard_normal(args.n))
    loading = None if args.plain else LoadingSpec()
    try:
        alpha = krr_solve(X, y, args.width, args.lam, loading=loading, bias=args.bias)
    except (DetectionError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    pred = krr_predict(X, alpha, args.lam, args.width, X, bias=args.bias)
    _emit(args, ["index", "prediction"], [(i, float(v)) for i, v in enumerate(pred)])
    print(f"train_accuracy={np.mean(np.sign(pred) == np.sign(y)):.4f}", file=sys.stderr)
    return 0


def _read_edges(path):
    try:
        E = np.atleast_2d(np.loadtxt(path, delimiter="\t", ndmin=2))
    except (OSError, ValueError) as err:
        raise UsageError(f"{path}: {err}") from err
    if E.shape[1] == 2:
        E = np.column_stack([E, np.ones(len(E))])
    if E.shape[1] != 3:
        raise UsageError(f"{path}: expected src, dst, weight columns")
    return E


def cmd_rate(args):
    import scipy.sparse as sp
    from . import ratings
    from .numcore import WeightedGraph
    E = _read_edges(args.edges)
    src, dst = E[:, 0].astype(int), E[:, 1].astype(int)
    n = int(max(src.max(), dst.max())) + 1 if args.n is None else args.n
    W = sp.csr_matrix((E[:, 2], (src, dst)), shape=(n, n))
    y = None
    if args.priors:
        P = _read_table(args.priors)
        y = np.full(n, np.nan)
        y[P[:, 0].astype(int)] = P[:, 1]
    try:
        if args.method == "cost":
            undirected = W + W.T - sp.diags(W.diagonal())
            x = ratings.rate(ratings.RatingProblem(WeightedGraph(undirected), args.beta, y=y))
        elif args.method == "spatial":
            x = ratings.spatial_rank(_row_normalize(W), args.alpha)
        elif args.method == "fundamental":
            x = ratings.fundamental_diagonal(_row_normalize(W), args.alpha)
        elif args.method == "pagerank":
            prior = np.ones(n) / n if y is None else np.nan_to_num(y)
            x = ratings.personalized_pagerank(_row_normalize(W).T, prior, args.alpha)
        elif args.method == "eigen":
            x = ratings.eigen_projection(WeightedGraph(W + W.T))
        else:
            x = ratings.eigen_projection_cost(WeightedGraph(W + W.T))
    except ratings.RatingSolveError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        raise UsageError(str(err)) from err
    _emit(args, ["node", "rating"], [(i, float(v)) for i, v in enumerate(x)])
    return 0


def _row_normalize(W):
    import scipy.sparse as sp
    s = np.asarray(W.sum(axis=1)).ravel()
    dangling = s == 0
    s[dangling] = 1.0
    R = sp.diags(1.0 / s) @ W
    if np.any(dangling):
        n = W.shape[0]
        R = R + sp.csr_matrix((np.full(dangling.sum(), 1.0), (np.flatnonzero(dangling),
                                                               np.flatnonzero(dangling))),
                              shape=(n, n))
    return sp.csr_matrix(R)


def cmd_kalman(args):
    from .convfix import LoadingSpec
    from .kalman import (KalmanSolveError, kalman_step_classical, kalman_step_gabp,
                         random_model)
    rng = np.random.default_rng(args.seed)
    model = random_model(args.d, args.m, rng)
    x_true = rng.standard_normal(args.d)
    x_g = x_c = np.zeros(args.d)
    P_g = P_c = np.eye(args.d)
    fix = LoadingSpec() if args.fix else None
    rows = []
    for k in range(1, args.steps + 1):
        x_true = model.A @ x_true + rng.multivariate_normal(np.zeros(args.d), model.Q)
        z = model.H @ x_true + rng.multivariate_normal(np.zeros(args.m), model.R)
        try:
            x_g, P_g = kalman_step_gabp(x_g, P_g, z, model, fix=fix)
        except KalmanSolveError as err:
            print(f"error at step {k}: {err}", file=sys.stderr)
            _emit(args, ["step", "p_diff_inf", "x_diff_inf"], rows)
            return 1
        x_c, P_c = kalman_step_classical(x_c, P_c, z, model)
        rows.append((k, float(np.max(np.abs(P_g - P_c))), float(np.max(np.abs(x_g - x_c)))))
    _emit(args, ["step", "p_diff_inf", "x_diff_inf"], rows)
    return 0


def cmd_num(args):
    from .gabp import SolverConfig
    from .lpnum import NumConfig, generate_num, solve_num_dual_decomp, solve_num_pd
    prob = generate_num(args.flows, args.links, args.route_len, seed=args.seed)
    if args.solver == "dualdecomp":
        f, lam, trace = solve_num_dual_decomp(prob, args.alpha, args.max_steps, args.gap_tol)
        rows = [(int(i), float(g), 0) for i, g in trace]
        ok = len(trace) and trace[-1, 1] < args.gap_tol
    else:
        cfg = NumConfig(gap_tol=args.gap_tol, solver=args.solver, max_steps=args.max_steps,
                        inner=SolverConfig(eps=1e-10, max_rounds=5000))
        try:
            f, lam, mu, trace = solve_num_pd(prob, cfg)
        except RuntimeError as err:
            print(f"error: {err}", file=sys.stderr)
            return 1
        rows = [(int(s), float(g), int(k)) for s, g, k in trace]
        ok = len(trace) and trace[-1, 1] < args.gap_tol
    _emit(args, ["step", "gap", "inner_iters"], rows)
    print(f"utility={prob.utility(f):.10g}", file=sys.stderr)
    return 0 if ok else 1


def cmd_tables(args):
    from .tables import TABLES, all_passed, table, write_csv
    names = TABLES if args.which == "all" else [args.which]
    rows = [r for name in names for r in table(name)]
    fh = _out(args)
    try:
        write_csv(rows, fh or sys.stdout)
    finally:
        if fh:
            fh.close()
    solver_failed = any(r.status not in ("converged", "diverged") for r in rows)
    if not all_passed(rows):
        print("some rows are outside their tolerance", file=sys.stderr)
    return 1 if solver_failed else 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="gabpkit", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for parallel-schedule solves (accepted; solves are "
                        "vectorized and run on one thread)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp_, seed=False, out=True):
        if seed:
            sp_.add_argument("--seed", type=int, default=42)
        if out:
            sp_.add_argument("--out", help="write CSV here instead of stdout")

    s = sub.add_parser("solve", help="solve A x = b from .mtx files")
    s.add_argument("A")
    s.add_argument("b")
    s.add_argument("--method", default="gabp",
                   choices=["gabp", "broadcast", "jacobi", "gauss_seidel", "sor"])
    s.add_argument("--schedule", default="parallel", choices=["parallel", "serial"])
    s.add_argument("--accel", default="none", choices=["none", "aitken", "steffensen"])
    s.add_argument("--eps", type=float, default=1e-6)
    s.add_argument("--omega", type=float)
    s.add_argument("--max-rounds", type=int, default=10000)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("diagnose", help="convergence conditions as key=value lines")
    s.add_argument("A")
    s.add_argument("--eps", type=float, default=1e-6)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("fix", help="diagonal-loading correction; CSV outer,max_dx,residual,"
                                   "inner_rounds")
    s.add_argument("A")
    s.add_argument("b")
    s.add_argument("--mode", default="per_node_gamma_star",
                   choices=["per_node_gamma_star", "scalar_gamma", "custom_diag"])
    s.add_argument("--gamma", type=float)
    s.add_argument("--margin", type=float, default=0.1)
    s.add_argument("--step-s", type=float, help="single-loop step; double loop when omitted")
    s.add_argument("--eps", type=float, default=1e-3)
    s.add_argument("--inner-eps", type=float, default=1e-6)
    s.add_argument("--max-rounds", type=int, default=1000)
    common(s)
    s.set_defaults(func=cmd_fix)

    s = sub.add_parser("poisson", help="2D Poisson on a p x p grid; CSV i,j,u")
    s.add_argument("--p", type=int, default=3)
    s.add_argument("--schedule", default="parallel", choices=["parallel", "serial"])
    s.add_argument("--eps", type=float, default=1e-6)
    s.add_argument("--max-rounds", type=int, default=10000)
    common(s)
    s.set_defaults(func=cmd_poisson)

    s = sub.add_parser("cdma-demo", help="MMSE CDMA detection; CSV user,bit,detected,x")
    s.add_argument("--n", type=int, default=64, help="chips")
    s.add_argument("--k", type=int, default=16, help="users")
    s.add_argument("--sigma2", type=float, default=0.5)
    s.add_argument("--S", help="spreading matrix (.mtx, n x k)")
    s.add_argument("--fix", action="store_true", help="use the double-loop correction")
    common(s, seed=True)
    s.set_defaults(func=cmd_cdma)

    s = sub.add_parser("krr", help="RBF kernel ridge regression; CSV index,prediction")
    s.add_argument("--data", help="CSV with features then label per row")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--width", type=float, default=0.3)
    s.add_argument("--lam", type=float, default=1.0)
    s.add_argument("--bias", action="store_true")
    s.add_argument("--plain", action="store_true",
                   help="plain GaBP without the loading correction (dense kernels often diverge)")
    common(s, seed=True)
    s.set_defaults(func=cmd_krr)

    s = sub.add_parser("rate", help="graph ratings; CSV node,rating")
    s.add_argument("edges", help="TSV src, dst, weight (0-based)")
    s.add_argument("--priors", help="CSV node,prior")
    s.add_argument("--method", default="cost",
                   choices=["cost", "spatial", "fundamental", "pagerank", "eigen",
                            "eigen-cost"])
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--alpha", type=float, default=0.85)
    s.add_argument("--n", type=int)
    common(s)
    s.set_defaults(func=cmd_rate)

    s = sub.add_parser("kalman-demo", help="CSV step,p_diff_inf,x_diff_inf")
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--d", type=int, default=4)
    s.add_argument("--m", type=int, default=2)
    s.add_argument("--fix", action="store_true")
    common(s, seed=True)
    s.set_defaults(func=cmd_kalman)

    s = sub.add_parser("num", help="network utility maximization; CSV step,gap,inner_iters")
    s.add_argument("--flows", type=int, default=100)
    s.add_argument("--links", type=int, default=200)
    s.add_argument("--route-len", type=float, default=10)
    s.add_argument("--solver", default="gabp", choices=["gabp", "direct", "dualdecomp"])
    s.add_argument("--gap-tol", type=float, default=1e-4)
    s.add_argument("--alpha", type=float, default=12.0, help="dual decomposition step")
    s.add_argument("--max-steps", type=int, default=100)
    common(s, seed=True)
    s.set_defaults(func=cmd_num)

    s = sub.add_parser("tables", help="iteration-count tables; CSV table,system,method,"
                                      "iterations,status,target,tol,pass")
    s.add_argument("--which", default="all",
                   choices=["all", "tab_1", "tab_2", "tab_nonPSD", "tab_2D_Poisson"])
    common(s)
    s.set_defaults(func=cmd_tables)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.threads < 1:
        print("usage error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"solver failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
