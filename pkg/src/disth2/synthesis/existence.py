"""Convex existence conditions for distributed and decentralized controllers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..analysis import AnalysisCertificate, MultiplierSet, build_Si, build_Ti, z_matrix
from ..errors import HypothesisViolated, SingularZ
from ..netmodel import NetworkModel, canonical_channel_layout
from ..sdp import SdpProblem, SdpSolution

__all__ = [
    "kernel_basis",
    "check_hypotheses",
    "SynthesisCertificate",
    "ExistenceProblem",
    "build_existence_problem",
    "fixed_scales",
    "node_lmi_dimensions",
    "AnalysisProblem",
    "build_analysis_problem",
]


def kernel_basis(M, rtol=1e-10) -> np.ndarray:
    """Orthonormal basis of ``ker M`` (columns), via the SVD.

    Singular values below ``rtol * sigma_max`` count as zero; a zero matrix
    gives the identity.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[1]
    if M.size == 0 or not np.any(M):
        return np.eye(n)
    _, s, Vt = np.linalg.svd(M)
    rank = int(np.sum(s > rtol * s[0]))
    return Vt[rank:].T.copy()


def check_hypotheses(model: NetworkModel):
    """Require ``B_Sd = 0`` and ``D_yd = 0`` at every node."""
    for i, nd in enumerate(model.nodes):
        if np.any(nd.B_Sd != 0):
            raise HypothesisViolated(f"node {i + 1}: B_Sd must be zero")
        if np.any(nd.D_yd != 0):
            raise HypothesisViolated(f"node {i + 1}: D_yd must be zero")


@dataclass
class SynthesisCertificate:
    """Solution of the existence problem.

    ``X11``/``Y11`` are :class:`MultiplierSet` objects carrying both the
    symmetric and the ``i > j`` families; in decentralized mode ``Y`` holds
    no variables and ``W`` blocks are the fixed inverses of ``Z``.
    """

    X: list
    Y: list
    alpha: list
    beta: list
    xmult: MultiplierSet
    ymult: Optional[MultiplierSet]
    gamma: float
    mode: str
    wmats: Optional[list] = None
    margins: dict = field(default_factory=dict)
    solve_time: float = 0.0

    def to_dict(self):
        return {
            "mode": self.mode,
            "gamma": self.gamma,
            "X": [x.tolist() for x in self.X],
            "Y": [y.tolist() for y in self.Y],
            "alpha": list(map(float, self.alpha)),
            "beta": list(map(float, self.beta)),
        }


def fixed_scales(mult: MultiplierSet, i: int):
    """Fixed ``Z`` of node ``i`` and its inverse ``W``.

    Raises
    ------
    SingularZ
    """
    Z = z_matrix(mult, i)
    if Z.size == 0:
        return Z, Z.copy()
    s = np.linalg.svd(Z, compute_uv=False)
    if s[-1] <= 1e-12 * max(s[0], 1.0):
        raise SingularZ(f"node {i + 1}: fixed interconnection scale is singular")
    W = np.linalg.inv(Z)
    return Z, 0.5 * (W + W.T)


def _add_scale_terms(expr, L3, L4, node_idx, layout, v11, v12, sign=1.0):
    """Add ``[L3; L4]' Z [L3; L4]`` for the multiplier variables of one node.

    ``v11[(i, j)]`` and ``v12[(i, j)]`` map pairs to SDP variables following
    the layout of :func:`disth2.analysis.assemble_Z_blocks`.
    """
    i = node_idx
    for j, off, w in layout:
        r3, r4 = L3[off:off + w], L4[off:off + w]
        expr.add_congruence(v11[(i, j)], r3, -sign)
        expr.add_congruence(v11[(j, i)], r4, sign)
        if j < i:
            expr.add(v12[(i, j)], r3, r4, -sign)
        else:
            expr.add(v12[(j, i)], r4, r3, sign)


@dataclass
class ExistenceProblem:
    problem: SdpProblem
    model: NetworkModel
    gamma: float
    mode: str
    fixed: Optional[MultiplierSet] = None
    wmats: Optional[list] = None
    psi: list = field(default_factory=list)
    phi: list = field(default_factory=list)

    def extract(self, sol: SdpSolution) -> SynthesisCertificate:
        v = sol.values
        L = self.model.L
        X = [v[f"X{i}"] for i in range(L)]
        Y = [v[f"Y{i}"] for i in range(L)]
        a = [v[f"alpha{i}"] for i in range(L)]
        b = [v[f"beta{i}"] for i in range(L)]
        if self.mode == "distributed":
            top = self.model.topology
            x11, y11, x12, y12 = {}, {}, {}, {}
            for (p, q) in top.edges:
                for i, j in ((p, q), (q, p)):
                    x11[(i, j)] = v[f"X11_{i}_{j}"]
                    y11[(i, j)] = v[f"Y11_{i}_{j}"]
                x12[(q, p)] = v[f"X12_{q}_{p}"]
                y12[(q, p)] = v[f"Y12_{q}_{p}"]
            xm = MultiplierSet(top, x11, x12)
            ym = MultiplierSet(top, y11, y12)
            wm = None
        else:
            xm, ym, wm = self.fixed, None, self.wmats
        return SynthesisCertificate(X, Y, a, b, xm, ym, self.gamma, self.mode, wm,
                                    dict(sol.margins), sol.solve_time)


def build_existence_problem(model: NetworkModel, gamma: float, mode: str = "distributed",
                            multipliers: Optional[MultiplierSet] = None,
                            eps_strict: Optional[float] = None,
                            objective_weight: float = 0.0,
                            coupling_margin: float = 0.0) -> ExistenceProblem:
    """Assemble the coupled existence SDP at level ``gamma``.

    ``mode`` is ``"distributed"`` (multipliers are decision variables) or
    ``"decentralized"`` (``multipliers`` fixed; the dual scale is their
    inverse).  Every per-node constraint is built from node data alone, so
    its size does not depend on the number of nodes.

    The objective ``objective_weight * sum_i (tr X_i + tr Y_i)`` keeps the
    storages bounded.  ``coupling_margin`` raises the margin of
    ``[[X, I], [I, Y]] > 0``.
    """
    check_hypotheses(model)
    if mode not in ("distributed", "decentralized"):
        raise ValueError(f"unknown mode {mode!r}")
    top = model.topology
    prob = SdpProblem(f"existence-{mode}")
    if eps_strict is not None:
        prob.eps_strict = eps_strict
    L = model.L
    Xs = [prob.symmetric(f"X{i}", nd.k) for i, nd in enumerate(model.nodes)]
    Ys = [prob.symmetric(f"Y{i}", nd.k) for i, nd in enumerate(model.nodes)]
    al = [prob.scalar(f"alpha{i}") for i in range(L)]
    be = [prob.scalar(f"beta{i}") for i in range(L)]
    vx11, vx12, vy11, vy12 = {}, {}, {}, {}
    wmats = None
    if mode == "distributed":
        for (p, q), w in top.widths.items():
            for i, j in ((p, q), (q, p)):
                vx11[(i, j)] = prob.symmetric(f"X11_{i}_{j}", w)
                vy11[(i, j)] = prob.symmetric(f"Y11_{i}_{j}", w)
            vx12[(q, p)] = prob.rectangular(f"X12_{q}_{p}", w, w)
            vy12[(q, p)] = prob.rectangular(f"Y12_{q}_{p}", w, w)
    else:
        if multipliers is None:
            multipliers = MultiplierSet.passivity(top)
        if multipliers.topology != top:
            raise ValueError("multipliers belong to a different topology")
        wmats = [fixed_scales(multipliers, i) for i in range(L)]

    ep = ExistenceProblem(prob, model, float(gamma), mode, multipliers if mode != "distributed" else None,
                          wmats)
    trace_const = 0.0
    trace_terms = []
    for i, nd in enumerate(model.nodes):
        k, n, q, f = nd.k, nd.n, nd.q, nd.f
        lay = canonical_channel_layout(top, i)
        psi = kernel_basis(np.hstack([nd.C_yT, nd.C_yS, nd.D_yd]))
        phi = kernel_basis(np.hstack([nd.B_Tu.T, nd.B_Su.T, nd.D_zu.T]))
        ep.psi.append(psi)
        ep.phi.append(phi)
        for kind, outer, basis, S, scal in (("X", build_Ti(nd), psi, Xs[i], al[i]),
                                            ("Y", build_Si(nd), phi, Ys[i], be[i])):
            G = outer @ basis
            sp_ = np.cumsum([0, k, k, n, n, q, f])
            B = [G[sp_[r]:sp_[r + 1]] for r in range(6)]
            e = prob.expr(G.shape[1])
            e.add_congruence(S, B[0], -1.0)
            e.add_congruence(S, B[1], 1.0)
            if mode == "distributed":
                v11, v12 = (vx11, vx12) if kind == "X" else (vy11, vy12)
                _add_scale_terms(e, B[2], B[3], i, lay, v11, v12)
            else:
                Zf = wmats[i][0] if kind == "X" else wmats[i][1]
                B34 = np.vstack([B[2], B[3]])
                e.add_const(B34.T @ Zf @ B34)
            e.add_const(B[4].T @ B[4])
            e.add_scalar(scal, -B[5].T @ B[5])
            if G.shape[1]:
                prob.add_lmi(e, "<" if kind == "X" else ">", name=f"exist{kind}_{i}")
        # [[X, I], [I, Y]] > 0
        e = prob.expr(2 * k)
        top_sel = np.hstack([np.eye(k), np.zeros((k, k))])
        bot_sel = np.hstack([np.zeros((k, k)), np.eye(k)])
        e.add_congruence(Xs[i], top_sel).add_congruence(Ys[i], bot_sel)
        e.add_const(np.block([[np.zeros((k, k)), np.eye(k)], [np.eye(k), np.zeros((k, k))]]))
        if k:
            prob.add_lmi(e, ">", name=f"existXY_{i}",
                         eps=max(coupling_margin, prob.eps_strict * 2.0))
        prob.add_linear([(al[i], -1.0)], sense="<=", name=f"alpha_pos_{i}")
        prob.add_linear([(be[i], -1.0)], sense="<=", name=f"beta_pos_{i}")
        trace_terms.append((Xs[i], nd.B_Td @ nd.B_Td.T))
        trace_const += float(np.sum(nd.D_zd ** 2))
    prob.add_linear(trace_terms, const=trace_const - gamma ** 2, sense="<=", name="trace",
                    eps=prob.eps_strict * (1.0 + gamma ** 2))
    if objective_weight:
        prob.minimize([(X, objective_weight * np.eye(X.shape[0])) for X in Xs]
                      + [(Y, objective_weight * np.eye(Y.shape[0])) for Y in Ys])
    return ep


def node_lmi_dimensions(ep: ExistenceProblem) -> list[dict]:
    """Per-node sizes of the local constraints and storage variables.

    Keys are the constraint stems ``existX``, ``existY`` and ``existXY``
    plus the storage sizes ``X`` and ``Y``; the dictionaries of two nodes
    with equal local data and degree are identical whatever the network size.
    """
    dims = {}
    for con in ep.problem.matrix_constraints:
        stem, _, idx = con.name.rpartition("_")
        dims.setdefault(int(idx), {})[stem] = con.expr.dim
    out = []
    for i in range(ep.model.L):
        d = dict(dims.get(i, {}))
        d["X"] = ep.problem.variables[f"X{i}"].shape[0]
        d["Y"] = ep.problem.variables[f"Y{i}"].shape[0]
        out.append(d)
    return out


@dataclass
class AnalysisProblem:
    problem: SdpProblem
    model: NetworkModel
    gamma: float

    def extract(self, sol: SdpSolution) -> AnalysisCertificate:
        v = sol.values
        top = self.model.topology
        x11, x12 = {}, {}
        for (p, q) in top.edges:
            x11[(p, q)] = v[f"X11_{p}_{q}"]
            x11[(q, p)] = v[f"X11_{q}_{p}"]
            x12[(q, p)] = v[f"X12_{q}_{p}"]
        return AnalysisCertificate([v[f"X{i}"] for i in range(self.model.L)],
                                   [v[f"rho{i}"] for i in range(self.model.L)],
                                   MultiplierSet(top, x11, x12), self.gamma)


def build_analysis_problem(model: NetworkModel, gamma: float,
                           eps_strict: Optional[float] = None) -> AnalysisProblem:
    """Search for storages, weights and multipliers that certify ``gamma``."""
    for i, nd in enumerate(model.nodes):
        if np.any(nd.B_Sd != 0):
            raise HypothesisViolated(f"node {i + 1}: B_Sd must be zero")
    top = model.topology
    prob = SdpProblem("analysis")
    if eps_strict is not None:
        prob.eps_strict = eps_strict
    Xs = [prob.symmetric(f"X{i}", nd.k) for i, nd in enumerate(model.nodes)]
    rho = [prob.scalar(f"rho{i}") for i in range(model.L)]
    v11, v12 = {}, {}
    for (p, q), w in top.widths.items():
        for i, j in ((p, q), (q, p)):
            v11[(i, j)] = prob.symmetric(f"X11_{i}_{j}", w)
        v12[(q, p)] = prob.rectangular(f"X12_{q}_{p}", w, w)
    trace_terms, trace_const = [], 0.0
    for i, nd in enumerate(model.nodes):
        k, n, q, f = nd.k, nd.n, nd.q, nd.f
        T = build_Ti(nd)
        sp_ = np.cumsum([0, k, k, n, n, q, f])
        B = [T[sp_[r]:sp_[r + 1]] for r in range(6)]
        e = prob.expr(T.shape[1])
        e.add_congruence(Xs[i], B[0], -1.0).add_congruence(Xs[i], B[1], 1.0)
        _add_scale_terms(e, B[2], B[3], i, canonical_channel_layout(top, i), v11, v12)
        e.add_const(B[4].T @ B[4])
        e.add_scalar(rho[i], -B[5].T @ B[5])
        if T.shape[1]:
            prob.add_lmi(e, "<", name=f"dissip_{i}")
        if k:
            prob.add_lmi(prob.expr(k).add_congruence(Xs[i], np.eye(k)), ">", name=f"storage_{i}")
        prob.add_linear([(rho[i], -1.0)], sense="<=", name=f"rho_pos_{i}")
        trace_terms.append((Xs[i], nd.B_Td @ nd.B_Td.T))
        trace_const += float(np.sum(nd.D_zd ** 2))
    prob.add_linear(trace_terms, const=trace_const - gamma ** 2, sense="<=", name="trace",
                    eps=prob.eps_strict * (1.0 + gamma ** 2))
    return AnalysisProblem(prob, model, float(gamma))
