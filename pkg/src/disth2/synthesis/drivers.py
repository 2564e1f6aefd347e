"""End-to-end synthesis: existence SDP, local construction, independent checks."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..analysis import (
    ClosedLoopReport,
    ExtendedMultipliers,
    MultiplierSet,
    closed_loop_certificate,
    closed_loop_scales,
    verify_closed_loop,
)
from ..errors import Infeasible, NumericalFailure, ReconstructionError
from ..netmodel import ControllerRealization, NetworkModel, build_uvw, interleave_permutation
from ..sdp import solve
from .existence import SynthesisCertificate, build_existence_problem, fixed_scales
from .reconstruct import (
    QmiResult,
    assemble_Pi,
    extend_multipliers,
    reconstruct_XK,
    recover_rho,
    solve_theta_qmi,
)

__all__ = ["NodeDiagnostics", "SynthesisResult", "synthesize_distributed",
           "synthesize_decentralized", "extend_all", "construct_controllers"]


@dataclass
class NodeDiagnostics:
    rho: float
    XK: np.ndarray
    qmi: QmiResult
    completion_residual: float


@dataclass
class SynthesisResult:
    controllers: list
    certificate: SynthesisCertificate
    report: ClosedLoopReport
    multipliers: object  # ExtendedMultipliers or MultiplierSet on the closed loop
    nodes: list = field(default_factory=list)
    extensions: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    model: Optional[NetworkModel] = field(default=None, repr=False)

    @property
    def verified(self) -> bool:
        return self.report.verified

    def closed_loop_certificate(self):
        """``(network, AnalysisCertificate)`` of the closed loop."""
        return closed_loop_certificate(self.model, self.controllers,
                                       [d.XK for d in self.nodes],
                                       [d.rho for d in self.nodes],
                                       self.multipliers, self.report.gamma)

    def summary(self) -> dict:
        out = {
            "mode": self.certificate.mode,
            "certificate_level": self.certificate.gamma,
            "verified": bool(self.verified),
            "timings": self.timings,
            "nodes": [{
                "rho": d.rho,
                "qmi_lambda_max": d.qmi.lam_max,
                "qmi_margin": d.qmi.margin,
                "qmi_strategy": d.qmi.strategy,
                "precondition_margins": list(map(float, d.qmi.precondition)),
            } for d in self.nodes],
        }
        out.update(self.report.to_dict())
        return out


def extend_all(cert: SynthesisCertificate) -> tuple[ExtendedMultipliers, list]:
    """Run the scale extension on every pair and collect the families."""
    top = cert.xmult.topology
    ctop = top.scaled(3)
    c11, c12, pc11, pc12, cp12 = {}, {}, {}, {}, {}
    exts = []
    for (j, i) in top.edges:  # j < i
        e = extend_multipliers(cert.xmult.pair_scale(i, j), cert.ymult.pair_scale(i, j), i, j)
        exts.append(e)
        a, b, c, d, e11, e12, e11r = e.families()
        pc11[(i, j)], pc12[(i, j)], cp12[(i, j)], pc11[(j, i)] = a, b, c, d
        c11[(i, j)], c12[(i, j)], c11[(j, i)] = e11, e12, e11r
    ext = ExtendedMultipliers(cert.xmult, MultiplierSet(ctop, c11, c12), pc11, pc12, cp12)
    return ext, exts


def construct_controllers(model: NetworkModel, cert: SynthesisCertificate, ext, qmi_kw=None):
    """Per-node completion, scale assembly and QMI solve.

    ``ext`` is an :class:`ExtendedMultipliers` (distributed) or ``None``
    (decentralized: fixed plant scales, no controller channels).
    """
    qmi_kw = qmi_kw or {}
    controllers, diags = [], []
    for i, nd in enumerate(model.nodes):
        rho = recover_rho(cert.alpha[i], cert.beta[i])
        XK, M, N = reconstruct_XK(cert.X[i], cert.Y[i], return_factors=True)
        k = nd.k
        comp = (XK @ np.block([[cert.Y[i], np.eye(k)], [N.T, np.zeros((k, k))]])
                - np.block([[np.eye(k), cert.X[i]], [np.zeros((k, k)), M.T]]))
        comp_res = float(np.linalg.norm(comp) / max(1.0, np.linalg.norm(XK)))
        lay = model.layout(i)
        pw = [(j, w) for j, _, w in lay]
        if ext is not None:
            cw = [(j, ext.ctrl.topology.width(i, j)) for j, _, _ in lay]
            Z11, Z12, Z22 = closed_loop_scales(ext, i)
            perm = interleave_permutation(pw, cw)
            Zs = []
            for Zb in (Z11, Z12, Z22):
                Zp = np.empty_like(Zb)
                Zp[np.ix_(perm, perm)] = Zb
                Zs.append(Zp)
            Z11, Z12, Z22 = Zs
        else:
            cw = []
            Zf, _ = fixed_scales(cert.xmult, i)
            n = nd.n
            Z11, Z12, Z22 = Zf[:n, :n], Zf[:n, n:], Zf[n:, n:]
        nC = sum(w for _, w in cw)
        P = assemble_Pi(XK, rho, Z11, Z12, Z22, nd.f, nd.q)
        U, V, W = build_uvw(nd, nC)
        try:
            res = solve_theta_qmi(P, U.T, V, W, **qmi_kw)
        except ReconstructionError as exc:
            exc.args = (f"node {i + 1}: {exc.args[0]}",)
            raise
        controllers.append(ControllerRealization(res.theta, k, tuple(cw), nd.m, nd.p))
        diags.append(NodeDiagnostics(rho, XK, res, comp_res))
    return controllers, diags


def _existence(model, gamma, mode, multipliers, sdp_kw, build_kw):
    t0 = time.perf_counter()
    ep = build_existence_problem(model, gamma, mode, multipliers, **(build_kw or {}))
    t1 = time.perf_counter()
    sol = solve(ep.problem, **(sdp_kw or {}))
    t2 = time.perf_counter()
    if sol.status == "infeasible":
        raise Infeasible(f"existence conditions infeasible at gamma={gamma}")
    if not sol.feasible:
        raise NumericalFailure(f"existence solve ended with status {sol.status} "
                               f"({sol.solver_status})")
    return ep.extract(sol), {"build_s": t1 - t0, "solve_s": t2 - t1}


def _run_levels(model, gamma, attempt, retries, shrink):
    """Call ``attempt(level)`` at ``gamma`` and then at tighter levels.

    A certificate at a level below ``gamma`` also certifies ``gamma``.  At a
    loose level the storages can grow in directions the trace bound does not
    see, which leaves the local construction with tiny relative margins; a
    tighter level keeps them bounded.  The first verified result is
    returned; otherwise the last result, or the first error if no attempt
    produced a result.
    """
    level, first_err, last = float(gamma), None, None
    levels = []
    for _ in range(retries + 1):
        levels.append(level)
        try:
            res = attempt(level)
        except (ReconstructionError, NumericalFailure) as exc:
            first_err = first_err or exc
        except Infeasible as exc:
            if level == gamma:
                raise
            first_err = first_err or exc
            break
        else:
            res.timings["levels"] = list(levels)
            if res.verified:
                return res
            last = res
        level *= shrink
    if last is not None:
        return last
    raise first_err


def _distributed_at(model, gamma, level, sdp_kw, build_kw, qmi_kw):
    cert, timings = _existence(model, level, "distributed", None, sdp_kw, build_kw)
    t0 = time.perf_counter()
    ext, exts = extend_all(cert)
    controllers, diags = construct_controllers(model, cert, ext, qmi_kw)
    timings["construct_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    report = verify_closed_loop(model, controllers, [d.XK for d in diags],
                                [d.rho for d in diags], ext, gamma)
    timings["verify_s"] = time.perf_counter() - t0
    return SynthesisResult(controllers, cert, report, ext, diags, exts, timings, model)


def synthesize_distributed(model: NetworkModel, gamma: float, sdp_kw=None, build_kw=None,
                           qmi_kw=None, retries: int = 3, shrink: float = 1 / 3) -> SynthesisResult:
    """Distributed controllers with three controller channels per plant channel.

    The existence problem is solved at ``gamma`` and, if the construction
    or the check fails, at up to ``retries`` levels shrunk by ``shrink``.
    The closed loop is always verified against ``gamma``.

    Raises
    ------
    Infeasible
    NumericalFailure
    ReconstructionError
        Tagged with the failing ``stage``.
    """
    return _run_levels(model, gamma,
                       lambda lv: _distributed_at(model, gamma, lv, sdp_kw, build_kw, qmi_kw),
                       retries, shrink)


def _decentralized_at(model, gamma, level, multipliers, sdp_kw, build_kw, qmi_kw):
    cert, timings = _existence(model, level, "decentralized", multipliers, sdp_kw, build_kw)
    t0 = time.perf_counter()
    controllers, diags = construct_controllers(model, cert, None, qmi_kw)
    timings["construct_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    report = verify_closed_loop(model, controllers, [d.XK for d in diags],
                                [d.rho for d in diags], multipliers, gamma)
    timings["verify_s"] = time.perf_counter() - t0
    return SynthesisResult(controllers, cert, report, multipliers, diags, [], timings, model)


def synthesize_decentralized(model: NetworkModel, gamma: float,
                             multipliers: Optional[MultiplierSet] = None,
                             sdp_kw=None, build_kw=None, qmi_kw=None,
                             retries: int = 3, shrink: float = 1 / 3) -> SynthesisResult:
    """Controllers without communication, certified with fixed multipliers.

    The default multipliers are the passivity choice ``X11 = 0, X12 = I/2``.
    Level retries work as in :func:`synthesize_distributed`.

    Raises
    ------
    SingularZ
    Infeasible
    """
    if multipliers is None:
        multipliers = MultiplierSet.passivity(model.topology)
    for i in range(model.L):
        fixed_scales(multipliers, i)
    return _run_levels(model, gamma,
                       lambda lv: _decentralized_at(model, gamma, lv, multipliers,
                                                    sdp_kw, build_kw, qmi_kw),
                       retries, shrink)
