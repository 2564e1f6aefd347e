import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from disth2.analysis import (
    analysis_residuals,
    build_Si,
    h2_norm_lyapunov,
    is_stable,
    local_residual,
    z_matrix,
)
from disth2.bench import gen_oscillator, random_cycle_params
from disth2.errors import (
    EliminationPreconditionFailed,
    HypothesisViolated,
    Infeasible,
    InertiaMismatch,
    NearSingularCompletion,
)
from disth2.netmodel import (
    NetworkModel,
    SubsystemRealization,
    Topology,
    assemble_generalized,
    feedback_interconnect,
    flat_controller,
)
from disth2.synthesis import (
    build_existence_problem,
    synthesize_central,
    synthesize_decentralized,
    synthesize_distributed,
)
from disth2.synthesis.existence import kernel_basis, node_lmi_dimensions
from disth2.synthesis.reconstruct import (
    extend_multipliers,
    qmi_residual,
    reconstruct_XK,
    recover_rho,
    solve_theta_qmi,
)


CASES = ["triangle-distributed", "cycle5-distributed", "pair-decentralized"]


# --- recover_rho --------------------------------------------------------------

@pytest.mark.parametrize("alpha,beta,rho", [(2.0, 1.0, 2.0), (0.1, 0.5, 2.0), (1.0, 1.0, 1.0)])
def test_recover_rho_branches(alpha, beta, rho):
    assert recover_rho(alpha, beta) == pytest.approx(rho)


def test_recover_rho_rejects_nonpositive():
    with pytest.raises(ValueError):
        recover_rho(0.0, 1.0)


def _star_matrices(model, cert, i, rho):
    nd = model.nodes[i]
    k, n, q, f = nd.k, nd.n, nd.q, nd.f
    psi = kernel_basis(np.hstack([nd.C_yT, nd.C_yS, nd.D_yd]))
    phi = kernel_basis(np.hstack([nd.B_Tu.T, nd.B_Su.T, nd.D_zu.T]))
    if cert.mode == "distributed":
        Z, W = z_matrix(cert.xmult, i), z_matrix(cert.ymult, i)
    else:
        Z, W = cert.wmats[i]
    lhs = psi.T @ local_residual(nd, cert.X[i], Z, rho) @ psi
    Pi = np.zeros((2 * k + 2 * n + q + f,) * 2)
    Pi[:k, :k] = -cert.Y[i]
    Pi[k:2 * k, k:2 * k] = cert.Y[i]
    Pi[2 * k:2 * k + 2 * n, 2 * k:2 * k + 2 * n] = W
    Pi[2 * k + 2 * n:2 * k + 2 * n + q, 2 * k + 2 * n:2 * k + 2 * n + q] = np.eye(q)
    Pi[-f:, -f:] = -np.eye(f) / rho
    S = build_Si(nd) @ phi
    return lhs, S.T @ Pi @ S


@pytest.mark.parametrize("case", CASES)
def test_rho_satisfies_both_star_inequalities(designs, case):
    res = designs[case]
    cert = res.certificate
    for i in range(res.model.L):
        rho = recover_rho(cert.alpha[i], cert.beta[i])
        A, B = _star_matrices(res.model, cert, i, rho)
        assert np.linalg.eigvalsh(A).max() < 0
        assert np.linalg.eigvalsh(B).min() > 0


@pytest.mark.parametrize("case", CASES)
def test_completion_postconditions(designs, case):
    cert = designs[case].certificate
    for X, Y in zip(cert.X, cert.Y):
        k = X.shape[0]
        XK, M, N = reconstruct_XK(X, Y, return_factors=True)
        lhs = XK @ np.block([[Y, np.eye(k)], [N.T, np.zeros((k, k))]])
        rhs = np.block([[np.eye(k), X], [np.zeros((k, k)), M.T]])
        assert np.linalg.norm(lhs - rhs) <= 1e-8 * max(1.0, np.linalg.norm(rhs))
        assert np.allclose(M @ N.T, np.eye(k) - X @ Y)
        np.linalg.cholesky(XK)


@pytest.mark.parametrize("case", CASES[:2])
def test_scale_extension_identity(designs, case):
    res = designs[case]
    assert res.extensions
    for e in res.extensions:
        assert e.residual() <= 1e-9
        full = e.full_scale()
        n2 = e.XP.shape[0]
        # the inverse of the extended scale carries Y^P in its plant block
        assert np.allclose(np.linalg.inv(full)[:n2, :n2], e.YP, rtol=1e-7, atol=1e-9)


@pytest.mark.parametrize("case", CASES)
def test_qmi_residuals_negative_with_margin(designs, case):
    for d in designs[case].nodes:
        assert d.qmi.lam_max < 0
        assert d.qmi.margin > 0


@pytest.mark.parametrize("case", CASES)
def test_end_to_end_soundness(designs, case):
    res = designs[case]
    assert res.verified
    flat = feedback_interconnect(assemble_generalized(res.model),
                                 flat_controller(res.model, res.controllers))
    assert is_stable(flat)[0]
    assert h2_norm_lyapunov(flat) < res.report.gamma
    assert h2_norm_lyapunov(flat) == pytest.approx(res.report.h2, rel=1e-8)
    net, cert = res.closed_loop_certificate()
    assert analysis_residuals(net, cert).verified


@pytest.mark.parametrize("case", CASES)
def test_controller_structure_follows_plant(designs, case):
    res = designs[case]
    for i, c in enumerate(res.controllers):
        plant = {j: w for j, _, w in res.model.layout(i)}
        ctrl = dict(c.channel_widths)
        if res.certificate.mode == "distributed":
            assert ctrl == {j: 3 * w for j, w in plant.items() if w}
        else:
            assert ctrl == {}


# --- local steps on synthetic data -------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_completion_on_random_coupled_pairs(k, seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((2 * k, 2 * k))
    big = G @ G.T + 0.1 * np.eye(2 * k)
    # [[X, I], [I, Y]] > 0 iff X > 0 and Y - X^-1 > 0
    X = big[:k, :k]
    Y = np.linalg.inv(X) + big[k:, k:] @ big[k:, k:].T / np.linalg.norm(big) + 1e-2 * np.eye(k)
    XK, M, N = reconstruct_XK(X, Y, return_factors=True)
    lhs = XK @ np.block([[Y, np.eye(k)], [N.T, np.zeros((k, k))]])
    rhs = np.block([[np.eye(k), X], [np.zeros((k, k)), M.T]])
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * max(1.0, np.linalg.norm(rhs)) * np.linalg.cond(XK)
    assert np.linalg.eigvalsh(XK).min() > 0
    assert np.allclose(XK[:k, :k], X)
    assert np.allclose(np.linalg.inv(XK)[:k, :k], Y, rtol=1e-6, atol=1e-8)


def test_completion_detects_singular_coupling():
    X = np.eye(2)
    with pytest.raises(NearSingularCompletion):
        reconstruct_XK(X, np.linalg.inv(X))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_extension_on_random_scales(n, seed):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((2 * n, 2 * n)))
    lam = np.concatenate([rng.uniform(0.1, 2.0, n), -rng.uniform(0.1, 2.0, n)])
    D = Q @ np.diag(lam) @ Q.T
    G = rng.standard_normal((2 * n, 2 * n))
    YP = G + G.T
    XP = D + np.linalg.inv(YP)
    e = extend_multipliers(XP, YP)
    assert e.residual() <= 1e-9
    assert e.M12.shape == (2 * n, 6 * n) and e.M22.shape == (6 * n, 6 * n)


def test_extension_rejects_wrong_inertia():
    with pytest.raises(InertiaMismatch):
        extend_multipliers(np.diag([2.0, 3.0]), np.eye(2))


def test_qmi_solver_on_a_static_gain_problem():
    # find theta with (a + theta)^2 - 1 < 0 written as a QMI in (x, z)
    P = np.diag([-1.0, 1.0])
    Ut = np.array([[1.0]])
    V = np.array([[1.0]])
    W = np.array([[2.5]])
    res = solve_theta_qmi(P, Ut, V, W)
    F = qmi_residual(P, Ut, V, W, res.theta)
    assert np.linalg.eigvalsh(F).max() == pytest.approx(res.lam_max)
    assert res.lam_max < 0
    assert abs(2.5 + res.theta[0, 0]) < 1


def test_qmi_solver_checks_kernel_precondition():
    # V = 0 leaves theta without influence; the open-loop residual is not negative
    P = np.diag([-1.0, 1.0])
    with pytest.raises(EliminationPreconditionFailed):
        solve_theta_qmi(P, np.array([[1.0]]), np.array([[0.0]]), np.array([[2.5]]))


# --- problem structure ---------------------------------------------------------

def test_per_node_dimensions_do_not_depend_on_size():
    dims = {}
    for L in (3, 8, 40):
        ep = build_existence_problem(gen_oscillator(random_cycle_params(L, 1)), 10.0)
        d = node_lmi_dimensions(ep)
        assert len(d) == L
        assert all(x == d[0] for x in d)
        dims[L] = (d[0], ep.problem.nvars / L)
    assert dims[3] == dims[8] == dims[40]


def test_hypotheses_checked():
    nd = SubsystemRealization.from_blocks(1, 1, 1, 1, 1, 1, A_TT=[[0.5]], B_Sd=[[1.0]],
                                          B_Tu=[[1.0]], C_yT=[[1.0]])
    model = NetworkModel(Topology(2, {(0, 1): 1}), [nd, nd])
    with pytest.raises(HypothesisViolated):
        build_existence_problem(model, 10.0)


def test_triangle_decentralized_reported_infeasible(triangle):
    with pytest.raises(Infeasible):
        synthesize_decentralized(triangle, 10.0)


def test_distributed_infeasible_below_open_loop_floor(triangle):
    with pytest.raises(Infeasible):
        synthesize_distributed(triangle, 0.01)


def test_retry_levels_are_recorded(designs):
    for res in designs.values():
        lv = res.timings["levels"]
        assert lv[0] == res.report.gamma
        assert all(b < a for a, b in zip(lv, lv[1:]))


# --- centralized baseline -------------------------------------------------------

def test_central_triangle(triangle):
    res = synthesize_central(triangle, 0.22)
    assert res.verified and res.h2 < 0.22
    assert res.controller.order == assemble_generalized(triangle).A.shape[0]
    flat = feedback_interconnect(assemble_generalized(triangle),
                                 flat_controller_from_central(res.controller))
    assert h2_norm_lyapunov(flat) == pytest.approx(res.h2, rel=1e-10)


def flat_controller_from_central(c):
    from disth2.netmodel import FlatStateSpace
    return FlatStateSpace(c.Ak, c.Bk, c.Ck, c.Dk)


def test_central_on_decoupled_stable_plant():
    nd = SubsystemRealization.from_blocks(1, 0, 1, 1, 1, 1, A_TT=[[0.3]], B_Td=[[1.0]],
                                          C_zT=[[1.0]], B_Tu=[[1.0]], C_yT=[[1.0]])
    model = NetworkModel(Topology(2), [nd, nd])
    res = synthesize_central(model, 10.0)
    assert res.verified


def test_central_infeasible_below_optimum(triangle):
    with pytest.raises(Infeasible):
        synthesize_central(triangle, 0.05)


def test_bisected_triangle_level_verifies(triangle):
    from disth2.sdp import bisect_gamma
    g, _ = bisect_gamma(lambda g: build_existence_problem(triangle, g).problem, 0.01, 1.0)
    assert g <= 1.0
    res = synthesize_distributed(triangle, 1.05 * g)
    assert res.verified and res.report.h2 < 1.05 * g
