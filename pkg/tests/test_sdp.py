import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from disth2.errors import InfeasibleAtHi
from disth2.sdp import SdpProblem, bisect_gamma, smat, solve, svec


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_svec_roundtrip_and_inner_product(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A = A + A.T
    B = rng.standard_normal((n, n))
    B = B + B.T
    assert np.allclose(smat(svec(A), n), A)
    assert np.allclose(smat(svec(A)), A)
    assert svec(A).shape == (n * (n + 1) // 2,)
    # svec is an isometry for the trace inner product
    assert svec(A) @ svec(B) == pytest.approx(np.trace(A @ B))


def _stein_problem(A):
    n = A.shape[0]
    prob = SdpProblem("stein")
    X = prob.symmetric("X", n)
    e = prob.expr(n)
    e.add(X, A, A).add_congruence(X, np.eye(n), -1.0)
    prob.add_lmi(e, "<", name="decrease")
    prob.add_lmi(prob.expr(n).add_congruence(X, np.eye(n)), ">", name="pos")
    return prob


def test_feasible_stein_inequality():
    A = np.array([[0.5, 0.4], [0.0, -0.7]])
    sol = solve(_stein_problem(A))
    assert sol.feasible
    X = sol["X"]
    assert np.linalg.eigvalsh(X).min() > 0
    assert np.linalg.eigvalsh(A.T @ X @ A - X).max() < 0
    assert all(m >= 0 for m in sol.margins.values())


def test_infeasible_stein_inequality():
    A = np.diag([1.1, 0.2])
    sol = solve(_stein_problem(A))
    assert sol.status == "infeasible"
    assert not sol.feasible


def test_minimize_trace_over_a_lower_bound():
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    prob = SdpProblem("lb")
    X = prob.symmetric("X", 2)
    e = prob.expr(2).add_congruence(X, np.eye(2))
    e.add_const(-P)
    prob.add_lmi(e, ">", name="lb", eps=1e-3)
    prob.minimize([(X, np.eye(2))])
    sol = solve(prob)
    assert sol.feasible
    assert np.trace(sol["X"]) == pytest.approx(np.trace(P) + 2e-3, rel=1e-5)


def test_boundary_point_is_not_reported_feasible():
    # optimum touches the boundary; the strict check must refuse it
    P = np.eye(2)
    prob = SdpProblem("edge")
    X = prob.symmetric("X", 2)
    e = prob.expr(2).add_congruence(X, np.eye(2))
    e.add_const(-P)
    prob.add_lmi(e, ">", name="lb", eps=0.0)
    prob.minimize([(X, np.eye(2))])
    sol = solve(prob)
    assert sol.status == "numerical-failure"
    assert sol.margins["lb"] < 0


def test_rectangular_and_scalar_variables():
    # find K with |0.9 + K| strictly inside the unit disc and t > K
    prob = SdpProblem("scalar")
    K = prob.rectangular("K", 1, 1)
    t = prob.scalar("t")
    e = prob.expr(2)
    e.add_const(np.eye(2))
    e.add(K, np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    e.add_const(0.9 * np.array([[0, 1.0], [1.0, 0]]))
    prob.add_lmi(e, ">", name="disc")
    prob.add_linear([(K, 1.0), (t, -1.0)], sense="<=", name="order")
    sol = solve(prob)
    assert sol.feasible
    k = float(np.squeeze(sol["K"]))
    assert abs(0.9 + k) < 1 and float(sol["t"]) > k


def _level_problem(g):
    # X > I and X < g I: feasible iff g > 1
    prob = SdpProblem("level")
    X = prob.symmetric("X", 2)
    lo = prob.expr(2).add_congruence(X, np.eye(2))
    lo.add_const(-np.eye(2))
    prob.add_lmi(lo, ">", name="lo")
    hi = prob.expr(2).add_congruence(X, np.eye(2))
    hi.add_const(-g * np.eye(2))
    prob.add_lmi(hi, "<", name="hi")
    return prob


def test_bisection_finds_threshold():
    g, sol = bisect_gamma(_level_problem, 0.5, 4.0, rel_tol=1e-4)
    assert sol.feasible
    assert g == pytest.approx(1.0, rel=1e-3)
    assert g >= 1.0


def test_bisection_reports_infeasible_bracket():
    with pytest.raises(InfeasibleAtHi):
        bisect_gamma(_level_problem, 0.2, 0.5)
    with pytest.raises(ValueError):
        bisect_gamma(_level_problem, 2.0, 1.0)


def test_infeasibility_radius_of_a_farkas_vector():
    from disth2.sdp import infeasibility_radius
    # x >= 1 and -x >= 0, written as b - A x in the nonnegative cone
    A = np.array([[-1.0], [1.0]])
    b = np.array([-1.0, 0.0])
    assert infeasibility_radius(A, b, np.array([1.0, 1.0]), [("nonneg", 2)]) == np.inf
    # a vector with b'z >= 0 proves nothing
    assert infeasibility_radius(A, b, np.array([0.0, 1.0]), [("nonneg", 2)]) == 0.0
    # an imperfect certificate only excludes a ball
    r = infeasibility_radius(A, b, np.array([1.0, 1.1]), [("nonneg", 2)])
    assert r == pytest.approx(10.0)


def test_bisection_with_constant_feasible_builder():
    g, sol = bisect_gamma(lambda g: _level_problem(5.0), 0.3, 2.0)
    assert g == 0.3 and sol.feasible


def test_bisection_with_fixed_certificate_only():
    # Example 1 certificate held fixed: only the trace bound depends on the level
    def build(g):
        prob = SdpProblem("fixed")
        prob.add_linear([], const=3.5 - g ** 2, sense="<=", name="trace", eps=0.0)
        return prob

    g, _ = bisect_gamma(build, 1.0, 3.0, rel_tol=1e-6)
    assert g == pytest.approx(np.sqrt(3.5), rel=1e-5)


def test_solve_is_deterministic():
    A = np.array([[0.5, 0.4], [0.0, -0.7]])
    a, b = solve(_stein_problem(A)), solve(_stein_problem(A))
    assert a.status == b.status
    assert a.margins.keys() == b.margins.keys()
    assert all(abs(a.margins[k] - b.margins[k]) <= 1e-9 for k in a.margins)


def test_triplet_dump(tmp_path):
    prob = _stein_problem(np.array([[0.5, 0.4], [0.0, -0.7]]))
    path = tmp_path / "prog.txt"
    prob.dump_triplets(path)
    lines = path.read_text().splitlines()
    nvars, nrows, nnz = map(int, lines[0].split())
    q, A, b, cones = prob.assemble()
    assert (nvars, nrows, nnz) == (prob.nvars, A.shape[0], A.nnz)
    i = lines.index("A")
    trip = np.array([list(map(float, ln.split())) for ln in lines[i + 1:]])
    dense = np.zeros(A.shape)
    dense[trip[:, 0].astype(int), trip[:, 1].astype(int)] = trip[:, 2]
    assert np.array_equal(dense, A.toarray())
    assert lines[lines.index("cones") + 1:i] == ["psd 2", "psd 2"]
