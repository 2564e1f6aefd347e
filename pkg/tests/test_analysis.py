import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_network
from disth2.analysis import (
    AnalysisCertificate,
    MultiplierSet,
    analysis_residuals,
    build_Si,
    build_Ti,
    h2_norm_freqgrid,
    h2_norm_lyapunov,
    internal_supplies,
    is_stable,
    local_residual,
    strict_margin,
    trajectory_dissipation_check,
    z_matrix,
)
from disth2.bench import example_one_certificate
from disth2.errors import Unstable
from disth2.netmodel import FlatStateSpace, Topology, assemble_interconnected, build_delta
from disth2.sdp import bisect_gamma, solve
from disth2.synthesis.existence import build_analysis_problem

EX1_H2 = np.sqrt(1 / (1 - 0.6 ** 2) + 1 / (1 - 0.4 ** 2))


def _random_multipliers(rng, top, scale=1.0):
    x11, x12 = {}, {}
    for (a, b), w in top.widths.items():
        for i, j in ((a, b), (b, a)):
            S = rng.standard_normal((w, w))
            x11[(i, j)] = scale * (S + S.T)
        x12[(b, a)] = scale * rng.standard_normal((w, w))
    return MultiplierSet(top, x11, x12)


def test_example_one_closed_form(ex1):
    flat = assemble_interconnected(ex1)
    assert np.allclose(flat.A, [[0.5, 0.1], [0.1, 0.5]])
    assert h2_norm_lyapunov(flat) == pytest.approx(EX1_H2, rel=1e-12)


def test_example_one_certificate_residuals(ex1):
    rep = analysis_residuals(ex1, example_one_certificate())
    assert rep.verified
    assert all(lam < 0 for lam in rep.lam_max)
    assert rep.gamma_min == pytest.approx(np.sqrt(3.5), abs=1e-12)


def test_certificate_fails_below_trace_bound(ex1):
    rep = analysis_residuals(ex1, example_one_certificate(gamma=1.8))
    assert not rep.verified
    assert rep.trace_slack < 0


def test_local_residual_agrees_with_report(ex1):
    cert = example_one_certificate()
    rep = analysis_residuals(ex1, cert)
    for i, nd in enumerate(ex1.nodes):
        R = local_residual(nd, cert.X[i], z_matrix(cert.multipliers, i), cert.rho[i])
        assert np.allclose(R, rep.residuals[i])


def test_analysis_sdp_upper_bounds_true_norm(ex1):
    g, sol = bisect_gamma(lambda g: build_analysis_problem(ex1, g).problem, 1.0, 4.0,
                          rel_tol=1e-4)
    assert g >= EX1_H2
    # the separable certificate is somewhat conservative here
    assert g == pytest.approx(1.768, abs=5e-3)
    cert = build_analysis_problem(ex1, g).extract(sol)
    assert analysis_residuals(ex1, cert).verified


def test_analysis_sdp_infeasible_below_norm(ex1):
    sol = solve(build_analysis_problem(ex1, 0.95 * EX1_H2).problem)
    assert not sol.feasible


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_h2_lyapunov_matches_frequency_grid(n, m, p, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A *= rng.uniform(0.0, 0.9) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    sys = FlatStateSpace(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)),
                         rng.standard_normal((p, m)))
    assert h2_norm_freqgrid(sys) == pytest.approx(h2_norm_lyapunov(sys), rel=1e-6)


def test_h2_of_unstable_system_raises():
    sys = FlatStateSpace(np.array([[1.2]]), np.ones((1, 1)), np.ones((1, 1)), np.zeros((1, 1)))
    assert not is_stable(sys)[0]
    with pytest.raises(Unstable):
        h2_norm_lyapunov(sys)


def test_outer_factors_have_expected_shapes(triangle):
    for nd in triangle.nodes:
        k, n, f, q = nd.k, nd.n, nd.f, nd.q
        T, S = build_Ti(nd), build_Si(nd)
        assert T.shape == (2 * k + 2 * n + q + f, k + n + f)
        assert S.shape == (2 * k + 2 * n + q + f, k + n + q)


def test_strict_margin_sign():
    assert strict_margin(-np.eye(2)) > 0
    assert strict_margin(np.eye(2)) < 0
    assert strict_margin(np.eye(2), sign=1) > 0


def test_multiplier_symmetry_enforced():
    top = Topology(2, {(0, 1): 2})
    with pytest.raises(ValueError):
        MultiplierSet(top, {(0, 1): np.array([[0.0, 1.0], [0.0, 0.0]])}, {})


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_internal_supplies_are_neutral(seed):
    rng = np.random.default_rng(seed)
    model = random_network(rng, max_dim=3)
    top = model.topology
    mult = _random_multipliers(rng, top)
    delta = build_delta(top)
    s = rng.standard_normal(delta.shape[0])
    sig = internal_supplies(mult, delta @ s, s)
    scale = 1.0 + np.sum(np.abs(sig))
    assert abs(np.sum(sig)) <= 1e-9 * scale


@pytest.mark.parametrize("seed", range(3))
def test_example_one_dissipation_along_trajectories(ex1, seed):
    cert = example_one_certificate()
    res = trajectory_dissipation_check(ex1, cert, horizon=1000, seed=seed)
    assert res.ok, (res.worst_slack, res.max_neutrality_error)
    res0 = trajectory_dissipation_check(ex1, cert, horizon=1000, seed=seed,
                                        zero_disturbance=True)
    assert res0.ok and res0.decreasing


def test_dissipation_check_catches_a_bad_certificate(ex1):
    # storage too small to absorb the coupling
    mult = MultiplierSet.uniform(ex1.topology, -0.2, 0.0)
    bad = AnalysisCertificate([np.array([[0.2]])] * 2, [20.0, 20.0], mult, 1.9)
    res = trajectory_dissipation_check(ex1, bad, horizon=200, seed=0)
    assert not res.ok


def test_outer_factors_of_example_one(ex1):
    nd = ex1.nodes[0]
    T = build_Ti(nd)
    assert np.allclose(T, [[1, 0, 0], [.5, .1, 1], [1, 0, 0], [0, 1, 0], [1, 0, 0], [0, 0, 1]])
    S = build_Si(nd)
    assert S.shape == (6, 3)
    assert np.allclose(S[1], [-1, 0, 0]) and np.allclose(S[4], [0, 0, -1])


def test_example_one_scale_blocks(ex1):
    from disth2.analysis import assemble_Z_blocks
    Z11, Z12, Z22 = assemble_Z_blocks(example_one_certificate().multipliers, 0)
    assert np.allclose(Z11, 0.2) and np.allclose(Z12, 0.0) and np.allclose(Z22, -0.2)


def test_stability_examples(ex1, triangle):
    ok, r = is_stable(assemble_interconnected(ex1))
    assert ok and r == pytest.approx(0.6)
    ok, r = is_stable(FlatStateSpace(np.eye(1), np.ones((1, 1)), np.ones((1, 1)), np.zeros((1, 1))))
    assert not ok and r == pytest.approx(1.0)
    assert not is_stable(assemble_interconnected(triangle))[0]


def test_h2_simple_values():
    sys = FlatStateSpace(np.zeros((2, 2)), np.eye(2), np.eye(2), np.zeros((2, 2)))
    assert h2_norm_lyapunov(sys) == pytest.approx(np.sqrt(2))
    D = np.array([[1.0, 2.0], [0.5, -1.0]])
    static = FlatStateSpace(np.zeros((0, 0)), np.zeros((0, 2)), np.zeros((2, 0)), D)
    assert h2_norm_freqgrid(static, 1024) == pytest.approx(np.linalg.norm(D))
    one = FlatStateSpace([[0.5]], [[1.0]], [[1.0]], [[0.0]])
    assert h2_norm_freqgrid(one) == pytest.approx(1.1547005, rel=1e-6)
    assert h2_norm_lyapunov(one) == pytest.approx(np.sqrt(1 / 0.75))
