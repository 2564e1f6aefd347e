"""Full-order centralized H2 output feedback on the flat plant.

Linearizing change of variables for the discrete-time problem: with
``Pi = [[Y, I], [V', 0]]`` and ``U V' = I - X Y`` the closed-loop
Gramian conditions become affine in ``(X, Y, K, L, M, N, Zt)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..analysis import h2_norm_lyapunov, is_stable
from ..errors import Infeasible, NearSingularCompletion, NumericalFailure, Unstable
from ..netmodel import (
    FlatStateSpace,
    GeneralizedPlant,
    NetworkModel,
    assemble_generalized,
    feedback_interconnect,
)
from ..sdp import SdpProblem, solve

__all__ = [
    "CentralController",
    "CentralResult",
    "build_central_problem",
    "recover_central_controller",
    "central_closed_loop",
    "finish_central",
    "synthesize_central",
]


@dataclass
class CentralController:
    """Dynamic output feedback ``xi+ = Ak xi + Bk y``, ``u = Ck xi + Dk y``."""

    Ak: np.ndarray
    Bk: np.ndarray
    Ck: np.ndarray
    Dk: np.ndarray

    @property
    def order(self) -> int:
        return self.Ak.shape[0]


@dataclass
class CentralResult:
    controller: CentralController
    gamma: float
    h2: float
    spectral_radius: float
    verified: bool
    values: dict = field(repr=False, default_factory=dict)
    timings: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"mode": "central", "gamma": self.gamma, "h2": self.h2,
                "spectral_radius": self.spectral_radius, "verified": bool(self.verified),
                "order": self.controller.order, "timings": self.timings}


def _sel(dim, start, width):
    E = np.zeros((width, dim))
    E[:, start:start + width] = np.eye(width)
    return E


def build_central_problem(plant: GeneralizedPlant, gamma: float, eps_strict=None) -> SdpProblem:
    """Feasibility SDP for a full-order controller with H2 norm below ``gamma``."""
    A, B1, B2, C1, C2 = plant.A, plant.B1, plant.B2, plant.C1, plant.C2
    D11, D12, D21 = plant.D11, plant.D12, plant.D21
    nx, nd, nu = A.shape[0], B1.shape[1], B2.shape[1]
    nz, ny = C1.shape[0], C2.shape[0]
    prob = SdpProblem("central")
    if eps_strict is not None:
        prob.eps_strict = eps_strict
    X = prob.symmetric("X", nx)
    Y = prob.symmetric("Y", nx)
    K = prob.rectangular("K", nx, nx)
    Lv = prob.rectangular("L", nx, ny)
    M = prob.rectangular("M", nu, nx)
    N = prob.rectangular("N", nu, ny)
    Zt = prob.symmetric("Zt", nd)

    def coupling(e, r1, r2):
        # [[Y, I], [I, X]] on rows r1 (Y) and r2 (X)
        e.add_congruence(Y, r1).add_congruence(X, r2)
        e.add_const(r1.T @ r2 + r2.T @ r1)

    # [[XX, AA', CC'], [AA, XX, 0], [CC, 0, I]] > 0
    dim = 4 * nx + nz
    e = prob.expr(dim)
    a1, a2, b1, b2, c = (_sel(dim, s, w) for s, w in
                         ((0, nx), (nx, nx), (2 * nx, nx), (3 * nx, nx), (4 * nx, nz)))
    coupling(e, a1, a2)
    coupling(e, b1, b2)
    e.add_const(c.T @ c)
    # AA = [[A Y + B2 M, A + B2 N C2], [K, X A + L C2]] in rows (b1, b2), cols (a1, a2)
    e.add(Y, A.T @ b1, a1).add(M, B2.T @ b1, a1)
    e.add_const(b1.T @ A @ a2 + a2.T @ A.T @ b1)
    e.add(N, B2.T @ b1, C2 @ a2)
    e.add(K, b2, a1)
    e.add(X, b2, A @ a2).add(Lv, b2, C2 @ a2)
    # CC = [C1 Y + D12 M, C1 + D12 N C2]
    e.add(Y, C1.T @ c, a1).add(M, D12.T @ c, a1)
    e.add_const(c.T @ C1 @ a2 + a2.T @ C1.T @ c)
    e.add(N, D12.T @ c, C2 @ a2)
    prob.add_lmi(e, ">", name="gramian")

    # [[XX, BB, 0], [BB', Zt, Dcl'], [0, Dcl, I]] > 0
    dim = 2 * nx + nd + nz
    e = prob.expr(dim)
    a1, a2, w, c = (_sel(dim, s, wd) for s, wd in
                    ((0, nx), (nx, nx), (2 * nx, nd), (2 * nx + nd, nz)))
    coupling(e, a1, a2)
    e.add_congruence(Zt, w)
    e.add_const(c.T @ c)
    # BB = [[B1 + B2 N D21], [X B1 + L D21]] in rows (a1, a2), cols w
    e.add_const(a1.T @ B1 @ w + w.T @ B1.T @ a1)
    e.add(N, B2.T @ a1, D21 @ w)
    e.add(X, a2, B1 @ w).add(Lv, a2, D21 @ w)
    # Dcl = D11 + D12 N D21 in rows c, cols w
    e.add_const(c.T @ D11 @ w + w.T @ D11.T @ c)
    e.add(N, D12.T @ c, D21 @ w)
    prob.add_lmi(e, ">", name="output")

    prob.add_linear([(Zt, np.eye(nd))], const=-gamma ** 2, sense="<=", name="trace",
                    eps=prob.eps_strict * (1.0 + gamma ** 2))
    return prob


def recover_central_controller(plant: GeneralizedPlant, v: dict, rtol=1e-10) -> CentralController:
    """Undo the change of variables with a balanced factorization of ``I - X Y``.

    Raises
    ------
    NearSingularCompletion
    """
    A, B2, C2 = plant.A, plant.B2, plant.C2
    X, Y, K, L, M, N = (v[k] for k in ("X", "Y", "K", "L", "M", "N"))
    nx = A.shape[0]
    Us, s, Vt = np.linalg.svd(np.eye(nx) - X @ Y)
    if nx and s[-1] <= rtol * max(1.0, s[0]):
        raise NearSingularCompletion(f"I - XY is nearly singular (sigma_min={s[-1]:.3g})",
                                     stage="central")
    U = Us * np.sqrt(s)
    V = Vt.T * np.sqrt(s)
    Dk = N
    Ck = np.linalg.solve(V, (M - Dk @ C2 @ Y).T).T
    Bk = np.linalg.solve(U, L - X @ B2 @ Dk)
    rest = K - U @ Bk @ C2 @ Y - X @ B2 @ Ck @ V.T - X @ (A + B2 @ Dk @ C2) @ Y
    Ak = np.linalg.solve(V, np.linalg.solve(U, rest).T).T
    return CentralController(Ak, Bk, Ck, Dk)


def central_closed_loop(plant: GeneralizedPlant, ctrl: CentralController) -> FlatStateSpace:
    return feedback_interconnect(plant, FlatStateSpace(ctrl.Ak, ctrl.Bk, ctrl.Ck, ctrl.Dk))


def finish_central(plant: GeneralizedPlant, sol, gamma: float, timings=None) -> CentralResult:
    """Recover and verify the controller from a solved central problem.

    Raises
    ------
    Infeasible
    NumericalFailure
    NearSingularCompletion
    """
    timings = dict(timings or {})
    t0 = time.perf_counter()
    if sol.status == "infeasible":
        raise Infeasible(f"central conditions infeasible at gamma={gamma}")
    if not sol.feasible:
        raise NumericalFailure(f"central solve ended with status {sol.status} "
                               f"({sol.solver_status})")
    ctrl = recover_central_controller(plant, sol.values)
    cl = central_closed_loop(plant, ctrl)
    stable, r = is_stable(cl)
    try:
        h2 = h2_norm_lyapunov(cl)
    except Unstable:
        h2 = float("inf")
    timings["verify_s"] = time.perf_counter() - t0
    return CentralResult(ctrl, float(gamma), h2, r, bool(stable and h2 < gamma),
                         sol.values, timings)


def synthesize_central(model: NetworkModel, gamma: float, sdp_kw=None,
                       eps_strict=None) -> CentralResult:
    """Centralized baseline; the result is re-verified on the flat closed loop.

    Raises
    ------
    Infeasible
    NumericalFailure
    NearSingularCompletion
    """
    t0 = time.perf_counter()
    plant = assemble_generalized(model)
    prob = build_central_problem(plant, gamma, eps_strict)
    t1 = time.perf_counter()
    sol = solve(prob, **(sdp_kw or {}))
    t2 = time.perf_counter()
    return finish_central(plant, sol, gamma, {"build_s": t1 - t0, "solve_s": t2 - t1})
