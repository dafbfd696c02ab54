import warnings

import numpy as np
import pytest

from conftest import cdma_system, random_pd_non_ws, random_walk_summable
from gabpkit.convfix import (InsufficientLoadingError, LoadingSpec, NotPositiveDefiniteError,
                             WalkSummabilityWarning, double_loop_solve, gamma_star,
                             loading_vector, ls_convfix, per_node_gamma_star, single_loop_solve)
from gabpkit.gabp import SolverConfig, solve_gabp, solve_gabp_broadcast
from gabpkit.numcore import DominanceClass, dominance_class, make_system, residual_per_equation

TIGHT = SolverConfig(eps=1e-10, max_rounds=5000)


def test_gamma_star_matches_eigen_oracle(rng):
    J, rho = random_pd_non_ws(10, rng)
    np.testing.assert_allclose(gamma_star(make_system(J)), rho - 1, rtol=1e-6)


def test_gamma_star_negative_when_walk_summable(rng):
    assert gamma_star(random_walk_summable(6, rng, 0.6)) < 0


def test_per_node_gamma_star():
    s = make_system(np.array([[1.0, 2], [2, 1]]))
    np.testing.assert_allclose(per_node_gamma_star(s), [1, 1])
    dd = make_system(np.array([[3.0, 1], [1, 3]]))
    np.testing.assert_allclose(per_node_gamma_star(dd), [0, 0])


def test_loaded_system_is_strictly_dominant(rng):
    J, _ = random_pd_non_ws(12, rng)
    s = make_system(J)
    g = loading_vector(s, LoadingSpec(margin=0.1))
    assert dominance_class(s.with_diag(s.diag + g)) == DominanceClass.STRICT


def test_zero_loading_equals_plain_gabp(rng):
    s = random_walk_summable(8, rng, 0.7)
    rep = double_loop_solve(s, LoadingSpec("custom_diag", gamma=0.0), TIGHT, TIGHT)
    plain = solve_gabp_broadcast(s, TIGHT)
    assert rep.rounds == 1
    np.testing.assert_allclose(rep.x, plain.x, atol=1e-12)


def test_double_loop_random_pd(rng):
    J, rho = random_pd_non_ws(12, rng, (1.4, 1.6))
    s = make_system(J, rng.standard_normal(12))
    spec = LoadingSpec("scalar_gamma", gamma=gamma_star(s) + 0.1)
    rep = double_loop_solve(s, spec, TIGHT, SolverConfig(eps=1e-9, max_rounds=20000))
    assert rep.converged
    np.testing.assert_allclose(rep.x, np.linalg.solve(J, s.b), atol=1e-6)


def test_single_loop_matches_double_loop(rng):
    J, _ = random_pd_non_ws(12, rng, (1.4, 1.6))
    s = make_system(J, rng.standard_normal(12))
    spec = LoadingSpec("scalar_gamma", gamma=gamma_star(s) + 0.1)
    dbl = double_loop_solve(s, spec, TIGHT, SolverConfig(eps=1e-9, max_rounds=20000))
    sgl = single_loop_solve(s, spec, 0.5, SolverConfig(eps=1e-9, max_rounds=100000))
    assert sgl.converged
    np.testing.assert_allclose(sgl.x, dbl.x, atol=1e-5)


def test_single_loop_zero_loading_is_plain_gabp(rng):
    s = random_walk_summable(8, rng, 0.7)
    sgl = single_loop_solve(s, LoadingSpec("custom_diag", gamma=0.0), 0.3,
                            SolverConfig(eps=1e-10, max_rounds=5000))
    np.testing.assert_allclose(sgl.x, solve_gabp_broadcast(s, TIGHT).x, atol=1e-9)


def test_single_loop_desk_cdma(rng):
    s, _, _ = cdma_system(64, 16, 0.1, rng)
    assert gamma_star(s) > 0
    rep = single_loop_solve(s, LoadingSpec(), 0.5, SolverConfig(eps=1e-9, max_rounds=100000))
    assert rep.converged
    np.testing.assert_allclose(rep.x, np.linalg.solve(s.to_dense(), s.b), atol=1e-6)


def test_fixed_point_residual_on_random_pd(rng):
    for _ in range(10):
        J, _ = random_pd_non_ws(12, rng)
        s = make_system(J, rng.standard_normal(12))
        rep = double_loop_solve(s, LoadingSpec(), outer_cfg=SolverConfig(eps=1e-8, max_rounds=50000))
        assert rep.converged
        assert residual_per_equation(s, rep.x) < 1e-5


def test_outer_error_non_increasing(rng):
    J, _ = random_pd_non_ws(12, rng)
    s = make_system(J, rng.standard_normal(12))
    rep = double_loop_solve(s, LoadingSpec(), TIGHT, SolverConfig(eps=1e-8, max_rounds=50000))
    exact = np.linalg.solve(J, s.b)
    # replay the outer iteration to measure the error against the dense solution
    g = rep.info["loading"]
    Jg = J + np.diag(g)
    x = np.zeros(12)
    errs = []
    for _ in range(rep.rounds):
        x = np.linalg.solve(Jg, s.b + g * x)
        errs.append(np.linalg.norm(x - exact))
    assert np.all(np.diff(errs[1:]) <= 1e-12)


def test_insufficient_loading_raises(rng):
    J, _ = random_pd_non_ws(12, rng, (1.5, 3.0))
    s = make_system(J, np.ones(12))
    with pytest.raises(InsufficientLoadingError):
        double_loop_solve(s, LoadingSpec("custom_diag", gamma=1e-3))


def test_not_pd_detected():
    s = make_system(np.array([[1.0, 2, 3], [2, 2, 1], [3, 1, 1]]), np.ones(3))
    with pytest.raises(NotPositiveDefiniteError):
        double_loop_solve(s, LoadingSpec(), outer_cfg=SolverConfig(eps=1e-9, max_rounds=5000))


def test_loading_tradeoff_trend(rng):
    s, _, _ = cdma_system(64, 16, 0.5, rng)
    gs = gamma_star(s)
    cfg = SolverConfig(eps=1e-6, max_rounds=5000)
    outer, inner = [], []
    for dg in (0.05, 0.2, 0.5, 1.0, 2.0, 4.0):
        rep = double_loop_solve(s, LoadingSpec("scalar_gamma", gamma=gs + dg), cfg, cfg)
        outer.append(rep.rounds)
        inner.append(np.mean(rep.info["inner_rounds"]))
    assert np.sum(np.diff(outer) < 0) <= 1
    assert np.sum(np.diff(inner) > 0) <= 1


def test_ls_convfix_identity():
    h = np.array([2.0, -4.0, 6.0])
    # rho = 1 exactly, so the walk-summability warning is expected
    with pytest.warns(WalkSummabilityWarning):
        x = ls_convfix(np.eye(3), h, 1.0)
    np.testing.assert_allclose(x, h / 2, atol=1e-8)


def test_ls_convfix_random(rng):
    Jt = rng.standard_normal((20, 8)) / np.sqrt(20)
    h = rng.standard_normal(20)
    gamma = 4.0
    exact = np.linalg.solve(Jt.T @ Jt + gamma * np.eye(8), Jt.T @ h)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WalkSummabilityWarning)
        x = ls_convfix(Jt, h, gamma, SolverConfig(eps=1e-12, max_rounds=10000))
    np.testing.assert_allclose(x, exact, atol=1e-6)


def test_ls_convfix_large_gamma(rng):
    Jt = rng.standard_normal((20, 8))
    h = rng.standard_normal(20)
    x = ls_convfix(Jt, h, 1e6, SolverConfig(eps=1e-14, max_rounds=1000))
    np.testing.assert_allclose(np.linalg.norm(x), np.linalg.norm(Jt.T @ h) / 1e6, rtol=0.01)


def test_ls_convfix_warns_when_not_walk_summable(rng):
    Jt = rng.standard_normal((20, 8))
    with pytest.warns(WalkSummabilityWarning):
        try:
            ls_convfix(Jt, rng.standard_normal(20), 0.5, SolverConfig(max_rounds=50))
        except InsufficientLoadingError:
            pass


def test_loading_spec_validation():
    with pytest.raises(ValueError):
        LoadingSpec(mode="tridiagonal")
