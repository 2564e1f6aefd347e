"""Stability, H2 norms and dissipativity certificates for networks.

A certificate assigns each node a quadratic storage ``V_i(x) = x' X_i x``, a
performance weight ``rho_i`` and, per node pair, quadratic interconnection
supplies parameterized by the multipliers ``X11`` and ``X12``.  The local
test is the negative definiteness of ``T_i' M_i T_i``; the global one is a
trace bound against ``gamma**2``.

The closed-loop test is the same test applied to the network of locally
controlled nodes (:func:`disth2.netmodel.closed_loop_network`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DimensionError, HypothesisViolated, Unstable
from .lyapunov import solve_discrete_lyapunov, spectral_radius
from .netmodel import (
    FlatStateSpace,
    NetworkModel,
    SubsystemRealization,
    Topology,
    assemble_interconnected,
    block_diag,
    build_delta,
    canonical_channel_layout,
    channel_offsets,
    closed_loop_network,
    interconnection_gains,
    interleave_permutation,
    well_posed,
)

__all__ = [
    "STRICT_REL",
    "STABILITY_TOL",
    "strict_margin",
    "is_stable",
    "h2_norm_lyapunov",
    "h2_norm_freqgrid",
    "build_Ti",
    "build_Si",
    "MultiplierSet",
    "ExtendedMultipliers",
    "assemble_Z_blocks",
    "z_matrix",
    "closed_loop_scales",
    "AnalysisCertificate",
    "AnalysisReport",
    "analysis_residuals",
    "local_residual",
    "flat_checks",
    "ClosedLoopReport",
    "verify_closed_loop",
    "closed_loop_certificate",
    "internal_supplies",
    "SupplyEvaluation",
    "DissipationResult",
    "trajectory_dissipation_check",
]

STRICT_REL = 1e-8


def strict_margin(M, rel=STRICT_REL, sign=-1):
    """Distance of ``M`` from the strict-definiteness threshold.

    For ``sign=-1`` returns ``-(lambda_max + eps)`` and for ``sign=+1``
    returns ``lambda_min - eps``, with ``eps = rel * (1 + ||M||_2)``.  A
    positive value means the strict inequality holds.  Empty matrices pass
    with ``inf``.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.inf
    S = 0.5 * (M + M.T)
    w = np.linalg.eigvalsh(S)
    eps = rel * (1.0 + np.max(np.abs(w)))
    if sign < 0:
        return float(-(w[-1] + eps))
    return float(w[0] - eps)


STABILITY_TOL = 1e-10


def is_stable(sys: FlatStateSpace, tol: float = STABILITY_TOL):
    """``(stable, spectral_radius)`` of the state matrix.

    Stability means ``rho(A) < 1 - tol``; rigid modes that land a rounding
    error below one do not count.
    """
    r = spectral_radius(sys.A)
    return r < 1.0 - tol, r


def h2_norm_lyapunov(sys: FlatStateSpace) -> float:
    """H2 norm from the observability Gramian.

    Raises
    ------
    Unstable
    """
    ok, r = is_stable(sys)
    if not ok:
        raise Unstable(f"spectral radius {r:.6g} >= 1")
    Q = solve_discrete_lyapunov(sys.A, sys.C.T @ sys.C)
    val = np.trace(sys.B.T @ Q @ sys.B) + np.sum(sys.D ** 2)
    return float(np.sqrt(max(val, 0.0)))


def h2_norm_freqgrid(sys: FlatStateSpace, grid_size: int = 2 ** 14) -> float:
    """H2 norm by the periodic trapezoid rule on ``grid_size`` frequencies.

    Test oracle only; the verified path uses :func:`h2_norm_lyapunov`.
    """
    if grid_size < 1024:
        raise ValueError("grid_size must be at least 1024")
    ok, r = is_stable(sys)
    if not ok:
        raise Unstable(f"spectral radius {r:.6g} >= 1")
    w = 2 * np.pi * np.arange(grid_size) / grid_size
    total = 0.0
    chunk = 2048
    for a in range(0, grid_size, chunk):
        G = sys.freqresp(w[a:a + chunk])
        total += float(np.sum(np.abs(G) ** 2))
    return float(np.sqrt(total / grid_size))


def build_Ti(node: SubsystemRealization) -> np.ndarray:
    """Outer factor for the local dissipation test.

    Columns ``(x, s, d)``; row groups ``(x, x_next | o, s | z, d)``.
    """
    k, n, f = node.k, node.n, node.f
    Z = np.zeros
    return np.block([
        [np.eye(k), Z((k, n)), Z((k, f))],
        [node.A_TT, node.A_TS, node.B_Td],
        [node.A_ST, node.A_SS, node.B_Sd],
        [Z((n, k)), np.eye(n), Z((n, f))],
        [node.C_zT, node.C_zS, node.D_zd],
        [Z((f, k)), Z((f, n)), np.eye(f)],
    ])


def build_Si(node: SubsystemRealization) -> np.ndarray:
    """Outer factor of the dual test.

    Columns ``(x_next, o, z)``; row groups ``(k, k | n, n | q, f)``.  The
    fourth block row carries ``C_zS'`` in the last column, the transpose
    partner of ``B_Sd`` in :func:`build_Ti`; with ``B_Sd = 0`` (required for
    synthesis) the dual pairing is exact.
    """
    k, n, q = node.k, node.n, node.q
    Z = np.zeros
    return np.block([
        [node.A_TT.T, node.A_ST.T, node.C_zT.T],
        [-np.eye(k), Z((k, n)), Z((k, q))],
        [Z((n, k)), -np.eye(n), Z((n, q))],
        [node.A_TS.T, node.A_SS.T, node.C_zS.T],
        [Z((q, k)), Z((q, n)), -np.eye(q)],
        [node.B_Td.T, node.B_Sd.T, node.D_zd.T],
    ])


def _sym(a, tol=1e-12, name="matrix"):
    a = np.array(a, dtype=float)
    if a.ndim < 2:
        a = np.atleast_2d(a) if a.size else a.reshape(0, 0)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square")
    if a.size and np.max(np.abs(a - a.T)) > tol * (1 + np.max(np.abs(a))):
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (a + a.T)


@dataclass(frozen=True, eq=False)
class MultiplierSet:
    """Interconnection multipliers.

    ``x11[(i, j)]`` is defined for every ordered pair with ``n_ij > 0`` and
    ``x12[(i, j)]`` for ``i > j`` only.  Missing entries are zero.
    """

    topology: Topology
    x11: Mapping[tuple[int, int], np.ndarray] = field(default_factory=dict)
    x12: Mapping[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        top = self.topology
        x11, x12 = {}, {}
        for (i, j), v in dict(self.x11).items():
            w = top.width(i, j)
            v = _sym(v, name=f"X11[{i},{j}]") if np.size(v) else np.zeros((w, w))
            if v.shape != (w, w):
                raise DimensionError(f"X11[{i},{j}] must be {w}x{w}")
            if w:
                x11[(i, j)] = v
        for (i, j), v in dict(self.x12).items():
            if i <= j:
                raise ValueError("X12 is stored for i > j only")
            w = top.width(i, j)
            v = np.array(v, dtype=float).reshape(w, w)
            if w:
                x12[(i, j)] = v
        object.__setattr__(self, "x11", x11)
        object.__setattr__(self, "x12", x12)

    def get11(self, i, j):
        w = self.topology.width(i, j)
        return self.x11.get((i, j), np.zeros((w, w)))

    def get12(self, i, j):
        if i <= j:
            raise ValueError("X12 is stored for i > j only")
        w = self.topology.width(i, j)
        return self.x12.get((i, j), np.zeros((w, w)))

    def pair_scale(self, i, j):
        """``[[X11_ij, X12_ij], [X12_ij', -X11_ji]]`` for ``i > j``."""
        a, b = self.get11(i, j), self.get12(i, j)
        return np.block([[a, b], [b.T, -self.get11(j, i)]])

    @classmethod
    def uniform(cls, topology: Topology, x11: float = 0.0, x12: float = 0.0):
        """Every block a multiple of the identity."""
        a, b = {}, {}
        for (i, j), w in topology.widths.items():
            a[(i, j)] = x11 * np.eye(w)
            a[(j, i)] = x11 * np.eye(w)
            b[(j, i)] = x12 * np.eye(w)
        return cls(topology, a, b)

    @classmethod
    def passivity(cls, topology: Topology):
        """``X11 = 0, X12 = I/2``: supply ``o' s`` on every channel."""
        return cls.uniform(topology, 0.0, 0.5)


def assemble_Z_blocks(mult: MultiplierSet, i: int):
    """``(Z11, Z12, Z22)`` of node ``i`` in canonical channel order."""
    lay = canonical_channel_layout(mult.topology, i)
    z11, z12, z22 = [], [], []
    for j, _, _ in lay:
        z11.append(-mult.get11(i, j))
        z22.append(mult.get11(j, i))
        z12.append(-mult.get12(i, j) if j < i else mult.get12(j, i).T)
    if not lay:
        e = np.zeros((0, 0))
        return e, e.copy(), e.copy()
    return block_diag(z11), block_diag(z12), block_diag(z22)


def z_matrix(mult: MultiplierSet, i: int) -> np.ndarray:
    z11, z12, z22 = assemble_Z_blocks(mult, i)
    return np.block([[z11, z12], [z12.T, z22]])


@dataclass(frozen=True, eq=False)
class ExtendedMultipliers:
    """Closed-loop multiplier families for plant (P), controller (C) and cross terms.

    Keys follow :class:`MultiplierSet`: ``*11`` families for ordered pairs,
    ``*12`` families for ``i > j``.  ``pc11[(i, j)]`` has shape
    ``(n_ij, n_ij^C)``; ``pc12`` likewise and ``cp12`` has shape
    ``(n_ij^C, n_ij)``.
    """

    plant: MultiplierSet
    ctrl: MultiplierSet
    pc11: Mapping[tuple[int, int], np.ndarray] = field(default_factory=dict)
    pc12: Mapping[tuple[int, int], np.ndarray] = field(default_factory=dict)
    cp12: Mapping[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def _cross(self, fam, i, j, transpose=False):
        a = self.plant.topology.width(i, j)
        b = self.ctrl.topology.width(i, j)
        shape = (b, a) if transpose else (a, b)
        return np.asarray(fam.get((i, j), np.zeros(shape)), dtype=float).reshape(shape)

    def to_closed_loop(self) -> MultiplierSet:
        """Multipliers of the closed-loop network in interleaved channel order."""
        top = self.plant.topology.plus(self.ctrl.topology)
        x11, x12 = {}, {}
        for (a, b) in self.plant.topology.plus(self.ctrl.topology).widths:
            for i, j in ((a, b), (b, a)):
                P, C = self.plant.get11(i, j), self.ctrl.get11(i, j)
                PC = self._cross(self.pc11, i, j)
                x11[(i, j)] = np.block([[P, PC], [PC.T, C]])
            i, j = b, a
            P, C = self.plant.get12(i, j), self.ctrl.get12(i, j)
            PC = self._cross(self.pc12, i, j)
            CP = self._cross(self.cp12, i, j, transpose=True)
            x12[(i, j)] = np.block([[P, PC], [CP, C]])
        return MultiplierSet(top, x11, x12)


def closed_loop_scales(ext: ExtendedMultipliers, i: int):
    """Closed-loop ``(Z11, Z12, Z22)`` of node ``i``, interleaved per neighbour.

    Assembled family by family (plant, controller and cross blocks) and then
    permuted so that each neighbour's plant channels precede its controller
    channels.
    """
    ptop, ctop = ext.plant.topology, ext.ctrl.topology
    nbrs = sorted(set(ptop.neighbors(i)) | set(ctop.neighbors(i)))
    p11, c11, pc11 = [], [], []
    p22, c22, pc22 = [], [], []
    p12, c12, pc12, cp12 = [], [], [], []
    for j in nbrs:
        p11.append(-ext.plant.get11(i, j))
        c11.append(-ext.ctrl.get11(i, j))
        pc11.append(-ext._cross(ext.pc11, i, j))
        p22.append(ext.plant.get11(j, i))
        c22.append(ext.ctrl.get11(j, i))
        pc22.append(ext._cross(ext.pc11, j, i))
        if j < i:
            p12.append(-ext.plant.get12(i, j))
            c12.append(-ext.ctrl.get12(i, j))
            pc12.append(-ext._cross(ext.pc12, i, j))
            cp12.append(-ext._cross(ext.cp12, i, j, transpose=True))
        else:
            p12.append(ext.plant.get12(j, i).T)
            c12.append(ext.ctrl.get12(j, i).T)
            pc12.append(ext._cross(ext.cp12, j, i, transpose=True).T)
            cp12.append(ext._cross(ext.pc12, j, i).T)

    def two_by_two(P, PC, CP, C):
        return np.block([[block_diag(P), block_diag(PC)], [block_diag(CP), block_diag(C)]])

    Z11 = two_by_two(p11, pc11, [m.T for m in pc11], c11)
    Z22 = two_by_two(p22, pc22, [m.T for m in pc22], c22)
    Z12 = two_by_two(p12, pc12, cp12, c12)
    pw = [(j, ptop.width(i, j)) for j in nbrs]
    cw = [(j, ctop.width(i, j)) for j in nbrs]
    perm = interleave_permutation(pw, cw)
    ix = np.ix_(perm, perm)
    return Z11[ix], Z12[ix], Z22[ix]


@dataclass(frozen=True, eq=False)
class AnalysisCertificate:
    X: Sequence[np.ndarray]
    rho: Sequence[float]
    multipliers: MultiplierSet
    gamma: float

    def __post_init__(self):
        X = tuple(_sym(x, tol=1e-9, name="X_i") for x in self.X)
        for x in X:
            if x.size:
                np.linalg.cholesky(x)
        rho = tuple(float(r) for r in self.rho)
        if any(r <= 0 for r in rho):
            raise ValueError("rho_i must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "rho", rho)


@dataclass
class AnalysisReport:
    residuals: list
    lam_max: list
    margins: list
    trace_value: float
    gamma: float
    trace_slack: float
    verified: bool

    @property
    def gamma_min(self) -> float:
        """Smallest performance level the storages certify."""
        return float(np.sqrt(self.trace_value))

    def to_dict(self):
        return {
            "lambda_max": [float(v) for v in self.lam_max],
            "margins": [float(v) for v in self.margins],
            "trace_value": self.trace_value,
            "gamma": self.gamma,
            "gamma_min": self.gamma_min,
            "trace_slack": self.trace_slack,
            "verified": bool(self.verified),
        }


def local_residual(node: SubsystemRealization, X, Zmat, rho) -> np.ndarray:
    """``T' diag(-X, X, Z, I, -rho I) T`` for one node."""
    T = build_Ti(node)
    mid = block_diag([-X, X, Zmat, np.eye(node.q), -rho * np.eye(node.f)])
    R = T.T @ mid @ T
    return 0.5 * (R + R.T)


def analysis_residuals(model: NetworkModel, cert: AnalysisCertificate,
                       rel=STRICT_REL) -> AnalysisReport:
    """Evaluate the local and global conditions of a storage certificate.

    Raises
    ------
    HypothesisViolated
        If some node has ``B_Sd != 0``.
    """
    if cert.multipliers.topology != model.topology:
        raise DimensionError("multipliers belong to a different topology")
    if len(cert.X) != model.L or len(cert.rho) != model.L:
        raise DimensionError("one storage matrix and rho per node required")
    res, lam, marg = [], [], []
    trace_val = 0.0
    for i, node in enumerate(model.nodes):
        if np.any(node.B_Sd != 0):
            raise HypothesisViolated(f"node {i + 1}: B_Sd must be zero")
        if cert.X[i].shape != (node.k, node.k):
            raise DimensionError(f"X_{i + 1} must be {node.k}x{node.k}")
        R = local_residual(node, cert.X[i], z_matrix(cert.multipliers, i), cert.rho[i])
        res.append(R)
        lam.append(float(np.linalg.eigvalsh(R)[-1]) if R.size else -np.inf)
        marg.append(strict_margin(R, rel))
        B, D = node.B_Td, node.D_zd
        trace_val += float(np.trace(B.T @ cert.X[i] @ B) + np.sum(D ** 2))
    slack = cert.gamma ** 2 - trace_val
    ok = all(m > 0 for m in marg) and slack > 0
    return AnalysisReport(res, lam, marg, trace_val, float(cert.gamma), float(slack), ok)


@dataclass
class ClosedLoopReport:
    analysis: Optional[AnalysisReport]
    well_posed: bool
    rcond: float
    spectral_radius: float
    h2: float
    gamma: float
    verified: bool
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "certificate": self.analysis.to_dict() if self.analysis else None,
            "well_posed": bool(self.well_posed),
            "rcond": self.rcond,
            "spectral_radius": self.spectral_radius,
            "h2": self.h2,
            "gamma": self.gamma,
            "verified": bool(self.verified),
            "notes": list(self.notes),
        }


def flat_checks(network: NetworkModel):
    """``(well_posed, rcond, spectral_radius, h2)``; ``h2`` is ``inf`` if unstable."""
    wp, rc = well_posed(network)
    if not wp:
        return False, rc, np.inf, np.inf
    flat = assemble_interconnected(network)
    stable, r = is_stable(flat)
    h2 = h2_norm_lyapunov(flat) if stable else np.inf
    return True, rc, r, h2


def closed_loop_certificate(model: NetworkModel, controllers, XK, rho, multipliers, gamma):
    """Closed-loop network and the analysis certificate carried by a synthesis.

    ``multipliers`` is an :class:`ExtendedMultipliers` or a
    :class:`MultiplierSet` on the closed-loop topology (interleaved order).
    The closed-loop ``B_S`` blocks, zero by construction, are set to exact
    zeros.

    Raises
    ------
    HypothesisViolated
    """
    net, _ = closed_loop_network(model, controllers)
    if isinstance(multipliers, ExtendedMultipliers):
        multipliers = multipliers.to_closed_loop()
    for i, node in enumerate(net.nodes):
        if np.max(np.abs(node.B_Sd), initial=0.0) > 1e-12:
            raise HypothesisViolated(f"node {i + 1}: closed-loop B_S must be zero")
    net = NetworkModel(net.topology, [
        SubsystemRealization(**{**nd.blocks(), "B_Sd": np.zeros_like(nd.B_Sd)})
        for nd in net.nodes])
    return net, AnalysisCertificate(XK, rho, multipliers, gamma)


def verify_closed_loop(model: NetworkModel, controllers, XK, rho, multipliers, gamma,
                       rel=STRICT_REL) -> ClosedLoopReport:
    """Check a closed-loop certificate and the flat closed loop independently."""
    net, cert = closed_loop_certificate(model, controllers, XK, rho, multipliers, gamma)
    notes = []
    rep = analysis_residuals(net, cert, rel)
    wp, rc, r, h2 = flat_checks(net)
    if not wp:
        notes.append("closed loop is not well-posed")
    ok = rep.verified and wp and r < 1 and h2 < gamma
    return ClosedLoopReport(rep, wp, rc, r, h2, float(gamma), ok, notes)


def internal_supplies(mult: MultiplierSet, o: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Per-node ``sigma_int = -[o; s]' Z [o; s]`` for global channel vectors."""
    top = mult.topology
    offs = channel_offsets(top)
    out = np.zeros(top.node_count)
    for i in range(top.node_count):
        sl = slice(offs[i], offs[i + 1])
        v = np.concatenate([o[sl], s[sl]])
        out[i] = -v @ z_matrix(mult, i) @ v
    return out


@dataclass
class SupplyEvaluation:
    sigma_int: np.ndarray
    sigma_ext: np.ndarray
    V: np.ndarray


@dataclass
class DissipationResult:
    ok: bool
    worst_slack: float
    max_neutrality_error: float
    decreasing: Optional[bool]
    seed: int
    supplies: SupplyEvaluation


def trajectory_dissipation_check(model: NetworkModel, cert: AnalysisCertificate,
                                 horizon: int = 1000, seed: int = 0,
                                 zero_disturbance: bool = False,
                                 neutrality_tol: float = 1e-9) -> DissipationResult:
    """Simulate and check the per-step dissipation inequalities of ``cert``.

    Each node must satisfy ``V_i(x_next) - V_i(x) <= sigma_int + sigma_ext``
    and the internal supplies must sum to zero.  With ``zero_disturbance`` the
    total storage must also decrease strictly while the state is nonzero.
    Failures are reported, not raised.
    """
    rng = np.random.default_rng(seed)
    flat = assemble_interconnected(model)
    Sx, Sd = interconnection_gains(model, ("d",))
    delta = build_delta(model.topology)
    ks = np.cumsum([0] + [nd.k for nd in model.nodes])
    fs = np.cumsum([0] + [nd.f for nd in model.nodes])
    offs = channel_offsets(model.topology)
    Zs = [z_matrix(cert.multipliers, i) for i in range(model.L)]
    L = model.L
    x = rng.standard_normal(flat.nstates)
    sig_int = np.zeros((horizon, L))
    sig_ext = np.zeros((horizon, L))
    V = np.zeros((horizon + 1, L))
    worst = np.inf
    neut = 0.0
    decreasing = True if zero_disturbance else None

    def storages(xv):
        return np.array([xv[ks[i]:ks[i + 1]] @ cert.X[i] @ xv[ks[i]:ks[i + 1]]
                         for i in range(L)])

    V[0] = storages(x)
    for t in range(horizon):
        d = np.zeros(flat.ninputs) if zero_disturbance else rng.standard_normal(flat.ninputs)
        s = Sx @ x + Sd @ d
        o = delta @ s
        x_next = flat.A @ x + flat.B @ d
        for i, nd in enumerate(model.nodes):
            xi, si, di = x[ks[i]:ks[i + 1]], s[offs[i]:offs[i + 1]], d[fs[i]:fs[i + 1]]
            zi = nd.C_zT @ xi + nd.C_zS @ si + nd.D_zd @ di
            v = np.concatenate([o[offs[i]:offs[i + 1]], si])
            sig_int[t, i] = -v @ Zs[i] @ v
            sig_ext[t, i] = cert.rho[i] * di @ di - zi @ zi
        V[t + 1] = storages(x_next)
        dV = V[t + 1] - V[t]
        supply = sig_int[t] + sig_ext[t]
        scale = 1.0 + np.abs(V[t]) + np.abs(V[t + 1]) + np.abs(sig_int[t]) + np.abs(sig_ext[t])
        slack = (supply - dV) / scale
        worst = min(worst, float(np.min(slack)))
        neut = max(neut, abs(float(np.sum(sig_int[t]))))
        if zero_disturbance and np.linalg.norm(x) > 1e-150:
            if not V[t + 1].sum() < V[t].sum():
                decreasing = False
        x = x_next
    ok = worst >= -1e-10 and neut <= neutrality_tol
    if zero_disturbance:
        ok = ok and bool(decreasing)
    return DissipationResult(ok, worst, neut, decreasing, seed,
                             SupplyEvaluation(sig_int, sig_ext, V))
