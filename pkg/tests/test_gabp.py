import numpy as np
import pytest

from conftest import random_dd, random_tree, random_walk_summable
from gabpkit.gabp import (MessageState, SingularSubgraphError, SolverConfig, ZeroDiagonalError,
                          broadcast_round, gabp_round, jacobi_reduced_round, marginals,
                          maxproduct_round, reduced_means, solve_gabp, solve_gabp_broadcast,
                          write_trace_csv)
from gabpkit.numcore import make_system


def _msg(sys, state, i, j):
    e = sys.indptr[i] + list(sys.neighbors(i)[0]).index(j)
    return state.P[e], state.mu[e]


def test_toy_solution(toy):
    rep = solve_gabp(toy, SolverConfig(eps=1e-9))
    assert rep.converged
    assert rep.rounds <= 4
    np.testing.assert_allclose(rep.x, [1, 2, -1], atol=1e-9)
    np.testing.assert_allclose(rep.P, [-12, 1.5, 4], atol=1e-9)


def test_toy_round_one_messages(toy):
    st = gabp_round(toy, MessageState.zeros(toy))
    x, y, z = 0, 1, 2
    assert _msg(toy, st, x, y) == (-4.0, 3.0)
    assert _msg(toy, st, y, x)[0] == -4.0
    assert _msg(toy, st, x, z) == (-9.0, -2.0)
    P_zx, mu_zx = _msg(toy, st, z, x)
    assert P_zx == -9.0
    np.testing.assert_allclose(mu_zx, 2 / 3, atol=1e-12)


def test_diagonal_system_has_no_messages():
    s = make_system(np.diag([2.0, 4.0]), np.array([2.0, 2.0]))
    st = gabp_round(s, MessageState.zeros(s))
    assert st.P.size == 0
    rep = solve_gabp(s)
    assert rep.rounds == 1 and rep.converged
    np.testing.assert_allclose(rep.x, [1.0, 0.5])
    np.testing.assert_allclose(rep.P, [2.0, 4.0])


def test_identity_returns_b(rng):
    b = rng.standard_normal(5)
    rep = solve_gabp(make_system(np.eye(5), b))
    np.testing.assert_allclose(rep.x, b)
    np.testing.assert_allclose(rep.P, np.ones(5))
    assert rep.rounds == 1


def test_serial_round_matches_hand_evaluation(rng):
    s = random_dd(6, rng)
    A = s.to_dense()
    st0 = MessageState(rng.standard_normal(s.n_edges) * 0.1, rng.standard_normal(s.n_edges))
    got = gabp_round(s, st0, "serial")
    P = {}
    mu = {}
    for e in range(s.n_edges):
        P[(s.src[e], s.indices[e])] = st0.P[e]
        mu[(s.src[e], s.indices[e])] = st0.mu[e]
    for i in range(6):
        for j in s.neighbors(i)[0]:
            others = [k for k in s.neighbors(i)[0] if k != j]
            Pc = A[i, i] + sum(P[(k, i)] for k in others)
            hc = s.b[i] + sum(P[(k, i)] * mu[(k, i)] for k in others)
            P[(i, j)] = -A[i, j] ** 2 / Pc
            mu[(i, j)] = hc / A[i, j]
    for e in range(s.n_edges):
        key = (s.src[e], s.indices[e])
        np.testing.assert_allclose(got.P[e], P[key], rtol=1e-13)
        np.testing.assert_allclose(got.mu[e], mu[key], rtol=1e-12)


def test_random_dd_matches_dense(rng):
    s = random_dd(20, rng)
    rep = solve_gabp(s, SolverConfig(eps=1e-10))
    np.testing.assert_allclose(rep.x, np.linalg.solve(s.to_dense(), s.b), atol=1e-6)


@pytest.mark.parametrize("schedule", ["parallel", "serial"])
def test_broadcast_equals_naive(rng, schedule):
    for _ in range(5):
        s = random_dd(8, rng)
        a = MessageState.zeros(s)
        b = MessageState.zeros(s)
        for _ in range(10):
            a = gabp_round(s, a, schedule)
            b = broadcast_round(s, b, schedule)[0]
            np.testing.assert_allclose(b.P, a.P, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(b.mu, a.mu, rtol=1e-12, atol=1e-14)


def test_broadcast_message_count(rng):
    s = random_dd(10, rng)
    assert solve_gabp_broadcast(s).messages_per_round == 10
    assert solve_gabp(s).messages_per_round == 90


def test_toy_broadcast_report_matches(toy):
    a = solve_gabp(toy, SolverConfig(eps=1e-9))
    b = solve_gabp_broadcast(toy, SolverConfig(eps=1e-9))
    assert a.rounds == b.rounds
    np.testing.assert_allclose(b.trace, a.trace, rtol=1e-12)


def test_tree_exactness(rng):
    s = random_tree(30, rng)
    rep = solve_gabp(s, SolverConfig(eps=1e-13, max_rounds=200))
    inv = np.linalg.inv(s.to_dense())
    np.testing.assert_allclose(rep.x, inv @ s.b, atol=1e-9)
    np.testing.assert_allclose(1.0 / rep.P, np.diag(inv), atol=1e-9)


def test_jacobi_reduction(rng):
    s = random_dd(7, rng)
    A = s.to_dense()
    D = np.diag(A)
    st = MessageState.zeros(s)
    x = s.b / D
    for _ in range(20):
        st = jacobi_reduced_round(s, st)
        x = (s.b - (A - np.diag(D)) @ x) / D
        np.testing.assert_allclose(reduced_means(s, st), x, atol=1e-12)


def test_maxproduct_equals_sumproduct(rng):
    s = random_walk_summable(6, rng, 0.7)
    a = MessageState.zeros(s)
    b = MessageState.zeros(s)
    for _ in range(8):
        a = gabp_round(s, a)
        b = maxproduct_round(s, b)
        np.testing.assert_allclose(b.P, a.P, atol=1e-12)
        np.testing.assert_allclose(b.mu, a.mu, atol=1e-12)


def test_converged_implies_small_change(rng):
    s = random_dd(12, rng)
    rep = solve_gabp(s, SolverConfig(eps=1e-7))
    assert rep.converged and rep.trace[-1, 1] < 1e-7


def test_divergence_reported():
    A = np.full((4, 4), 0.6) + 0.4 * np.eye(4)
    rep = solve_gabp(make_system(A, np.ones(4)), SolverConfig(max_rounds=2000))
    assert rep.status == "diverged"


def test_max_rounds_status(toy):
    rep = solve_gabp(toy, SolverConfig(eps=1e-9, max_rounds=1))
    assert rep.status == "max_rounds"


def test_zero_diagonal_rejected():
    s = make_system(np.array([[0.0, 1], [1, 1]]), np.ones(2))
    with pytest.raises(ZeroDiagonalError):
        solve_gabp(s)


def test_zero_diagonal_hub_converges():
    A = np.array([[0.0, 1, 1], [1, 2, 0], [1, 0, 3]])
    s = make_system(A, np.array([1.0, 2.0, 3.0]))
    rep = solve_gabp(s, SolverConfig(eps=1e-12), allow_zero_diag=True)
    assert rep.converged
    np.testing.assert_allclose(rep.x, np.linalg.solve(A, s.b), atol=1e-9)


def test_zero_diagonal_leaf_reports_singular():
    s = make_system(np.array([[0.0, 1], [1, 1]]), np.array([1.0, 2.0]))
    rep = solve_gabp(s, SolverConfig(eps=1e-12), allow_zero_diag=True)
    assert rep.status == "singular"


def test_singular_cavity_raises():
    # x's cavity toward y is zero: A_xx plus z's message cancels exactly
    s = make_system(np.array([[1.0, 1, 1], [1, 2, 0], [1, 0, 1]]), np.ones(3))
    st = MessageState.zeros(s)
    with pytest.raises(SingularSubgraphError):
        for _ in range(3):
            st = gabp_round(s, st)


def test_marginals_from_zero_messages(toy):
    x, P = marginals(toy, MessageState.zeros(toy))
    np.testing.assert_allclose(x, toy.b / toy.diag)
    np.testing.assert_allclose(P, toy.diag)


def test_info_metric_handles_tiny_couplings(rng):
    n = 6
    A = np.eye(n) + 1e-20 * (np.ones((n, n)) - np.eye(n))
    A[0, 1] = A[1, 0] = 0.3
    s = make_system(A, rng.standard_normal(n))
    rep = solve_gabp(s, SolverConfig(eps=1e-10, metric="info"))
    assert rep.converged
    np.testing.assert_allclose(rep.x, np.linalg.solve(A, s.b), atol=1e-9)
    assert solve_gabp(s, SolverConfig(eps=1e-10)).status == "diverged"


def test_trace_csv(toy, tmp_path):
    rep = solve_gabp(toy)
    write_trace_csv(rep, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "round,max_dmsg,residual"
    assert len(lines) == rep.rounds + 1


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(schedule="random")
    with pytest.raises(ValueError):
        SolverConfig(eps=0)
    with pytest.raises(ValueError):
        SolverConfig(metric="other")
