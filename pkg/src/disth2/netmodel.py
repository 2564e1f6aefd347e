"""Graph-structured discrete-time systems.

A network is a set of nodes, each a state-space system

    x_i(k+1) = A_TT x_i + A_TS s_i + B_Td d_i + B_Tu u_i
    o_i(k)   = A_ST x_i + A_SS s_i + B_Sd d_i + B_Su u_i
    z_i(k)   = C_zT x_i + C_zS s_i + D_zd d_i + D_zu u_i
    y_i(k)   = C_yT x_i + C_yS s_i + D_yd d_i

coupled pairwise through ``o_ij = s_ji``.  The incoming vector ``s_i`` stacks
the channels ``s_ij`` by ascending neighbour index; every channel of the pair
``{i, j}`` has the same width ``n_ij``.

Node indices are 0-based in code and 1-based in files and on the command line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionError, HypothesisViolated, SingularInterconnection

__all__ = [
    "Topology",
    "SubsystemRealization",
    "NetworkModel",
    "FlatStateSpace",
    "GeneralizedPlant",
    "ControllerRealization",
    "ClosedLoopLocal",
    "block_diag",
    "canonical_channel_layout",
    "channel_offsets",
    "build_delta",
    "well_posed",
    "interconnection_gains",
    "assemble_interconnected",
    "assemble_generalized",
    "build_uvw",
    "close_local",
    "closed_loop_network",
    "controller_network",
    "feedback_interconnect",
    "flat_controller",
    "interleave_permutation",
    "WELL_POSED_RCOND",
]

WELL_POSED_RCOND = 1e-12


def _frozen(a, shape=None):
    a = np.array(a, dtype=float, copy=True)
    if shape is not None:
        if a.size == 0:
            a = a.reshape(shape)
        elif a.ndim < 2:
            a = a.reshape(shape)
    a.setflags(write=False)
    return a


def block_diag(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Block diagonal stack that keeps zero-height or zero-width blocks."""
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


@dataclass(frozen=True)
class Topology:
    """Undirected graph with a channel width per node pair.

    ``widths`` maps unordered pairs to ``n_ij``; keys may be given in either
    order, self-loops are rejected and zero widths are dropped.
    """

    node_count: int
    widths: Mapping[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be positive")
        norm = {}
        for (i, j), w in dict(self.widths).items():
            i, j, w = int(i), int(j), int(w)
            if i == j:
                raise ValueError(f"self-connection at node {i}")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ValueError(f"pair ({i}, {j}) out of range")
            if w < 0:
                raise ValueError("channel widths must be non-negative")
            key = (min(i, j), max(i, j))
            if key in norm and norm[key] != w:
                raise ValueError(f"conflicting widths for pair {key}")
            if w > 0:
                norm[key] = w
        object.__setattr__(self, "widths", dict(sorted(norm.items())))

    def width(self, i: int, j: int) -> int:
        if i == j:
            return 0
        return self.widths.get((min(i, j), max(i, j)), 0)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(self.widths)

    def neighbors(self, i: int) -> list[int]:
        return [j for j in range(self.node_count) if self.width(i, j) > 0]

    def node_width(self, i: int) -> int:
        return sum(self.width(i, j) for j in range(self.node_count))

    def scaled(self, factor: int) -> "Topology":
        """Same graph with every width multiplied by ``factor``."""
        return Topology(self.node_count, {e: factor * w for e, w in self.widths.items()})

    def plus(self, other: "Topology") -> "Topology":
        if other.node_count != self.node_count:
            raise ValueError("node counts differ")
        keys = set(self.widths) | set(other.widths)
        return Topology(self.node_count,
                        {e: self.widths.get(e, 0) + other.widths.get(e, 0) for e in keys})

    @classmethod
    def cycle(cls, L: int, width: int = 1) -> "Topology":
        """Cycle graph ``0-1-...-(L-1)-0``; ``L = 2`` gives a single edge."""
        if L == 1:
            return cls(1)
        if L == 2:
            return cls(2, {(0, 1): width})
        return cls(L, {(i, (i + 1) % L): width for i in range(L)})


def canonical_channel_layout(topology: Topology, node: int) -> list[tuple[int, int, int]]:
    """``(neighbor, offset, width)`` for each channel of ``node``, ascending neighbour."""
    if not 0 <= node < topology.node_count:
        raise IndexError(node)
    out = []
    off = 0
    for j in range(topology.node_count):
        w = topology.width(node, j)
        if w > 0:
            out.append((j, off, w))
            off += w
    return out


def channel_offsets(topology: Topology) -> np.ndarray:
    """Start index of each node's block inside the global ``s`` (or ``o``) vector."""
    n = [topology.node_width(i) for i in range(topology.node_count)]
    return np.concatenate([[0], np.cumsum(n)]).astype(int)


def build_delta(topology: Topology) -> np.ndarray:
    """Permutation ``Delta`` with ``o = Delta s`` for the whole network."""
    offs = channel_offsets(topology)
    n = int(offs[-1])
    delta = np.zeros((n, n))
    layouts = [canonical_channel_layout(topology, i) for i in range(topology.node_count)]
    where = {}
    for i, lay in enumerate(layouts):
        for j, off, w in lay:
            where[(i, j)] = (offs[i] + off, w)
    for (i, j), (row, w) in where.items():
        col, _ = where[(j, i)]
        delta[row:row + w, col:col + w] = np.eye(w)
    return delta


_BLOCKS = ("A_TT", "A_TS", "A_ST", "A_SS", "B_Td", "B_Sd", "B_Tu", "B_Su",
           "C_zT", "C_zS", "C_yT", "C_yS", "D_zd", "D_zu", "D_yd", "D_yu")


@dataclass(frozen=True, eq=False)
class SubsystemRealization:
    """State-space blocks of one node.

    Blocks that are omitted in :meth:`from_blocks` are zero.  Dimensions:
    ``k`` states, ``n`` interconnection, ``f`` disturbance, ``q`` performance,
    ``m`` control inputs, ``p`` measurements.
    """

    A_TT: np.ndarray
    A_TS: np.ndarray
    A_ST: np.ndarray
    A_SS: np.ndarray
    B_Td: np.ndarray
    B_Sd: np.ndarray
    B_Tu: np.ndarray
    B_Su: np.ndarray
    C_zT: np.ndarray
    C_zS: np.ndarray
    C_yT: np.ndarray
    C_yS: np.ndarray
    D_zd: np.ndarray
    D_zu: np.ndarray
    D_yd: np.ndarray
    D_yu: np.ndarray

    def __post_init__(self):
        k = np.shape(self.A_TT)[0]
        n = np.shape(self.A_SS)[0]
        f = np.shape(self.B_Td)[1]
        q = np.shape(self.C_zT)[0]
        m = np.shape(self.B_Tu)[1]
        p = np.shape(self.C_yT)[0]
        rows = {"T": k, "S": n, "z": q, "y": p}
        cols = {"T": k, "S": n, "d": f, "u": m}
        for name in _BLOCKS:
            # name[2] is the row group, name[3] the column group
            shape = (rows[name[2]], cols[name[3]])
            arr = _frozen(getattr(self, name), shape)
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        if np.any(self.D_yu != 0):
            raise HypothesisViolated("D_yu must be zero")

    @classmethod
    def from_blocks(cls, k, n, f, q, m=0, p=0, **blocks) -> "SubsystemRealization":
        rows = {"T": k, "S": n, "z": q, "y": p}
        cols = {"T": k, "S": n, "d": f, "u": m}
        unknown = set(blocks) - set(_BLOCKS)
        if unknown:
            raise TypeError(f"unknown blocks {sorted(unknown)}")
        full = {}
        for name in _BLOCKS:
            shape = (rows[name[2]], cols[name[3]])
            full[name] = blocks.get(name, np.zeros(shape))
        return cls(**full)

    @property
    def k(self) -> int:
        return self.A_TT.shape[0]

    @property
    def n(self) -> int:
        return self.A_SS.shape[0]

    @property
    def f(self) -> int:
        return self.B_Td.shape[1]

    @property
    def q(self) -> int:
        return self.C_zT.shape[0]

    @property
    def m(self) -> int:
        return self.B_Tu.shape[1]

    @property
    def p(self) -> int:
        return self.C_yT.shape[0]

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _BLOCKS}

    def __eq__(self, other):
        if not isinstance(other, SubsystemRealization):
            return NotImplemented
        return all(np.array_equal(getattr(self, b), getattr(other, b)) for b in _BLOCKS)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class NetworkModel:
    topology: Topology
    nodes: tuple[SubsystemRealization, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if len(self.nodes) != self.topology.node_count:
            raise DimensionError("one realization per node is required")
        for i, node in enumerate(self.nodes):
            if node.n != self.topology.node_width(i):
                raise DimensionError(
                    f"node {i} has n={node.n} but its channels sum to "
                    f"{self.topology.node_width(i)}")

    @property
    def L(self) -> int:
        return self.topology.node_count

    def layout(self, i: int):
        return canonical_channel_layout(self.topology, i)

    def __eq__(self, other):
        if not isinstance(other, NetworkModel):
            return NotImplemented
        return self.topology == other.topology and all(
            a == b for a, b in zip(self.nodes, other.nodes))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FlatStateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = _frozen(self.A)
        nx = A.shape[0] if A.ndim == 2 else 0
        A = A.reshape(nx, nx)
        D = _frozen(self.D)
        if D.ndim < 2:
            D = D.reshape(np.atleast_2d(D).shape)
        B = _frozen(self.B, (nx, D.shape[1]))
        C = _frozen(self.C, (D.shape[0], nx))
        if B.shape != (nx, D.shape[1]) or C.shape != (D.shape[0], nx):
            raise DimensionError("inconsistent state-space dimensions")
        for name, val in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, name, val)

    @property
    def nstates(self) -> int:
        return self.A.shape[0]

    @property
    def ninputs(self) -> int:
        return self.D.shape[1]

    @property
    def noutputs(self) -> int:
        return self.D.shape[0]

    def freqresp(self, omegas) -> np.ndarray:
        """Transfer matrix on ``z = exp(i w)``; shape ``(len(omegas), ny, nu)``."""
        omegas = np.atleast_1d(omegas)
        z = np.exp(1j * omegas)
        nx = self.nstates
        if nx == 0:
            return np.broadcast_to(self.D, (len(z),) + self.D.shape).astype(complex)
        M = z[:, None, None] * np.eye(nx) - self.A
        X = np.linalg.solve(M, np.broadcast_to(self.B, (len(z),) + self.B.shape))
        return self.C @ X + self.D


@dataclass(frozen=True)
class GeneralizedPlant:
    """Flat plant with inputs ``(d, u)`` and outputs ``(z, y)``; ``D22 = 0``."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray

    @property
    def performance(self) -> FlatStateSpace:
        return FlatStateSpace(self.A, self.B1, self.C1, self.D11)


def _aggregate(model: NetworkModel):
    nodes = model.nodes
    return {name: block_diag([getattr(nd, name) for nd in nodes]) for name in _BLOCKS}


def _interconnection_inverse(model: NetworkModel, agg=None):
    agg = agg if agg is not None else _aggregate(model)
    delta = build_delta(model.topology)
    M = delta - agg["A_SS"]
    return M, agg


def well_posed(model: NetworkModel, rcond_min: float = WELL_POSED_RCOND):
    """``(ok, rcond)`` where ``rcond`` is the reciprocal 2-norm condition of ``Delta - A_SS``."""
    M, _ = _interconnection_inverse(model)
    if M.size == 0:
        return True, 1.0
    s = np.linalg.svd(M, compute_uv=False)
    rc = float(s[-1] / s[0]) if s[0] > 0 else 0.0
    return rc > rcond_min, rc


def interconnection_gains(model: NetworkModel, inputs=("d",)):
    """Matrices ``(Sx, Sw)`` with ``s = Sx x + Sw w`` after elimination.

    ``w`` stacks the requested node input groups, each aggregated over all
    nodes (``"d"``, ``"u"``).
    """
    ok, rc = well_posed(model)
    if not ok:
        raise SingularInterconnection(f"Delta - A_SS is singular (rcond={rc:.3g})")
    M, agg = _interconnection_inverse(model)
    BS = np.hstack([agg["B_S" + g] for g in inputs]) if inputs else np.zeros((M.shape[0], 0))
    rhs = np.hstack([agg["A_ST"], BS])
    H = np.linalg.solve(M, rhs) if M.size else rhs
    nx = agg["A_TT"].shape[0]
    return H[:, :nx], H[:, nx:]


def _eliminate(model: NetworkModel, inputs, outputs):
    Sx, Sw = interconnection_gains(model, inputs)
    agg = _aggregate(model)
    BT = np.hstack([agg["B_T" + g] for g in inputs])
    rows_T = [agg["C_" + g + "T"] for g in outputs]
    rows_S = [agg["C_" + g + "S"] for g in outputs]
    D = np.block([[agg["D_" + r + c] for c in inputs] for r in outputs])
    CT = np.vstack(rows_T)
    CS = np.vstack(rows_S)
    A = agg["A_TT"] + agg["A_TS"] @ Sx
    B = BT + agg["A_TS"] @ Sw
    C = CT + CS @ Sx
    D = D + CS @ Sw
    return A, B, C, D


def assemble_interconnected(model: NetworkModel) -> FlatStateSpace:
    """Eliminate ``s`` and ``o``; the result maps ``d`` to ``z``."""
    A, B, C, D = _eliminate(model, ("d",), ("z",))
    return FlatStateSpace(A, B, C, D)


def assemble_generalized(model: NetworkModel) -> GeneralizedPlant:
    """Flat generalized plant with inputs ``(d, u)`` and outputs ``(z, y)``."""
    A, B, C, D = _eliminate(model, ("d", "u"), ("z", "y"))
    nd = sum(nd.f for nd in model.nodes)
    nz = sum(nd.q for nd in model.nodes)
    if np.any(np.abs(D[nz:, nd:]) > 0):
        raise HypothesisViolated("flat D22 is nonzero")
    return GeneralizedPlant(A, B[:, :nd], B[:, nd:], C[:nz], C[nz:],
                            D[:nz, :nd], D[:nz, nd:], D[nz:, :nd])


@dataclass(frozen=True, eq=False)
class ControllerRealization:
    """Local controller of one node, stored as the block matrix ``theta``.

    Rows of ``theta`` are ``(xi_next, o^C, u)`` and columns ``(xi, s^C, y)``.
    ``channel_widths`` lists ``(neighbor, n_ij^C)`` in ascending neighbour order.
    """

    theta: np.ndarray
    k: int
    channel_widths: tuple[tuple[int, int], ...]
    m: int
    p: int

    def __post_init__(self):
        cw = tuple((int(j), int(w)) for j, w in self.channel_widths if int(w) > 0)
        object.__setattr__(self, "channel_widths", tuple(sorted(cw)))
        shape = (self.k + self.nC + self.m, self.k + self.nC + self.p)
        th = _frozen(self.theta, shape)
        if th.shape != shape:
            raise DimensionError(f"theta has shape {th.shape}, expected {shape}")
        object.__setattr__(self, "theta", th)

    @property
    def nC(self) -> int:
        return sum(w for _, w in self.channel_widths)

    def _split(self):
        r = np.cumsum([0, self.k, self.nC, self.m])
        c = np.cumsum([0, self.k, self.nC, self.p])
        return r, c

    def block(self, row: int, col: int) -> np.ndarray:
        r, c = self._split()
        return self.theta[r[row]:r[row + 1], c[col]:c[col + 1]]

    def blocks(self) -> dict[str, np.ndarray]:
        names = (("A_TT", "A_TS", "B_T"), ("A_ST", "A_SS", "B_S"), ("C_T", "C_S", "D"))
        return {names[a][b]: self.block(a, b) for a in range(3) for b in range(3)}

    @classmethod
    def from_blocks(cls, blocks, k, channel_widths, m, p) -> "ControllerRealization":
        names = (("A_TT", "A_TS", "B_T"), ("A_ST", "A_SS", "B_S"), ("C_T", "C_S", "D"))
        nC = sum(w for _, w in channel_widths)
        rs, cs = (k, nC, m), (k, nC, p)
        theta = np.block([[np.asarray(blocks[names[a][b]], float).reshape(rs[a], cs[b])
                           for b in range(3)] for a in range(3)])
        return cls(theta, k, tuple(channel_widths), m, p)

    def __eq__(self, other):
        if not isinstance(other, ControllerRealization):
            return NotImplemented
        return (np.array_equal(self.theta, other.theta) and self.k == other.k
                and self.channel_widths == other.channel_widths
                and (self.m, self.p) == (other.m, other.p))

    __hash__ = None


def build_uvw(plant: SubsystemRealization, nC: int):
    """Matrices with ``Gamma = U.T @ Theta @ V + W`` for a controller with ``nC`` channels.

    ``Gamma`` rows are ``(x_next, xi_next, o, o^C, z)`` and columns
    ``(x, xi, s, s^C, d)``; this block order is kept for all local algebra.
    """
    if np.any(plant.D_yu != 0):
        raise HypothesisViolated("D_yu must be zero")
    k, n, f, q, m, p = plant.k, plant.n, plant.f, plant.q, plant.m, plant.p
    Z = np.zeros
    Ut = np.block([
        [Z((k, k)), Z((k, nC)), plant.B_Tu],
        [np.eye(k), Z((k, nC)), Z((k, m))],
        [Z((n, k)), Z((n, nC)), plant.B_Su],
        [Z((nC, k)), np.eye(nC), Z((nC, m))],
        [Z((q, k)), Z((q, nC)), plant.D_zu],
    ])
    V = np.block([
        [Z((k, k)), np.eye(k), Z((k, n)), Z((k, nC)), Z((k, f))],
        [Z((nC, k)), Z((nC, k)), Z((nC, n)), np.eye(nC), Z((nC, f))],
        [plant.C_yT, Z((p, k)), plant.C_yS, Z((p, nC)), plant.D_yd],
    ])
    W = np.block([
        [plant.A_TT, Z((k, k)), plant.A_TS, Z((k, nC)), plant.B_Td],
        [Z((k, k)), Z((k, k)), Z((k, n)), Z((k, nC)), Z((k, f))],
        [plant.A_ST, Z((n, k)), plant.A_SS, Z((n, nC)), plant.B_Sd],
        [Z((nC, k)), Z((nC, k)), Z((nC, n)), Z((nC, nC)), Z((nC, f))],
        [plant.C_zT, Z((q, k)), plant.C_zS, Z((q, nC)), plant.D_zd],
    ])
    return Ut.T, V, W


def interleave_permutation(plant_widths, ctrl_widths) -> np.ndarray:
    """Index map from the interleaved channel order into ``(s, s^C)`` order.

    ``plant_widths`` and ``ctrl_widths`` are ``(neighbor, width)`` lists.  The
    interleaved order puts, per neighbour, the plant block before the
    controller block.
    """
    pw = dict(plant_widths)
    cw = dict(ctrl_widths)
    nbrs = sorted(set(pw) | set(cw))
    n = sum(pw.values())
    p_off = c_off = 0
    idx = []
    for j in nbrs:
        a, b = pw.get(j, 0), cw.get(j, 0)
        idx.extend(range(p_off, p_off + a))
        idx.extend(range(n + c_off, n + c_off + b))
        p_off += a
        c_off += b
    return np.array(idx, dtype=int)


@dataclass(frozen=True, eq=False)
class ClosedLoopLocal:
    """Plant node closed by its local controller.

    ``gamma`` is in the block order of :func:`build_uvw`; ``subsystem`` is the
    same map with channels interleaved per neighbour, ready to be used as a
    node of the closed-loop network.
    """

    gamma: np.ndarray
    k: int
    n: int
    nC: int
    f: int
    q: int
    perm: np.ndarray
    subsystem: SubsystemRealization

    def partition(self) -> dict[str, np.ndarray]:
        """Blocks of ``gamma`` in ``(x^K, s^K, d)`` x ``(x^K, o^K, z)`` order (not interleaved)."""
        kk, nn = 2 * self.k, self.n + self.nC
        r = np.cumsum([0, kk, nn, self.q])
        c = np.cumsum([0, kk, nn, self.f])
        rows, cols = ("A_T", "A_S", "C_"), ("T", "S", "d")
        names = {("A_T", "T"): "A_TT", ("A_T", "S"): "A_TS", ("A_T", "d"): "B_T",
                 ("A_S", "T"): "A_ST", ("A_S", "S"): "A_SS", ("A_S", "d"): "B_S",
                 ("C_", "T"): "C_T", ("C_", "S"): "C_S", ("C_", "d"): "D"}
        return {names[(rows[a], cols[b])]: self.gamma[r[a]:r[a + 1], c[b]:c[b + 1]]
                for a in range(3) for b in range(3)}


def close_local(plant: SubsystemRealization, controller: ControllerRealization,
                plant_widths: Sequence[tuple[int, int]]) -> ClosedLoopLocal:
    """Close one plant node with its controller (``Gamma = U'.Theta.V + W``)."""
    if controller.m != plant.m or controller.p != plant.p or controller.k != plant.k:
        raise DimensionError("controller does not match plant dimensions")
    pw = [(j, w) for j, w in plant_widths if w > 0]
    if sum(w for _, w in pw) != plant.n:
        raise DimensionError("plant channel widths do not sum to n")
    extra = set(j for j, _ in controller.channel_widths) - set(j for j, _ in pw)
    if extra:
        raise DimensionError(f"controller channels to non-neighbours {sorted(extra)}")
    nC = controller.nC
    U, V, W = build_uvw(plant, nC)
    gamma = U.T @ controller.theta @ V + W
    k, n, f, q = plant.k, plant.n, plant.f, plant.q
    perm = interleave_permutation(pw, controller.channel_widths)
    kk, nn = 2 * k, n + nC
    xs = np.arange(kk)
    ss = kk + perm
    zs = kk + nn + np.arange(q)
    ds = kk + nn + np.arange(f)
    g = gamma
    sub = SubsystemRealization.from_blocks(
        kk, nn, f, q,
        A_TT=g[np.ix_(xs, xs)], A_TS=g[np.ix_(xs, ss)], B_Td=g[np.ix_(xs, ds)],
        A_ST=g[np.ix_(ss, xs)], A_SS=g[np.ix_(ss, ss)], B_Sd=g[np.ix_(ss, ds)],
        C_zT=g[np.ix_(zs, xs)], C_zS=g[np.ix_(zs, ss)], D_zd=g[np.ix_(zs, ds)],
    )
    return ClosedLoopLocal(_frozen(gamma), k, n, nC, f, q, perm, sub)


def _controller_topology(model: NetworkModel, controllers) -> Topology:
    widths = {}
    for i, c in enumerate(controllers):
        for j, w in c.channel_widths:
            if model.topology.width(i, j) == 0:
                raise DimensionError(f"controller link {i}-{j} has no plant link")
            key = (min(i, j), max(i, j))
            if widths.get(key, w) != w:
                raise DimensionError(f"controller widths disagree on pair {key}")
            widths[key] = w
    return Topology(model.L, widths)


def closed_loop_network(model: NetworkModel, controllers: Sequence[ControllerRealization]):
    """Network of locally closed nodes with channel widths ``n_ij + n_ij^C``.

    Returns ``(network, locals)`` where ``locals`` are the :class:`ClosedLoopLocal`.
    """
    if len(controllers) != model.L:
        raise DimensionError("one controller per node is required")
    ctop = _controller_topology(model, controllers)
    top = model.topology.plus(ctop)
    locs = []
    for i, (plant, ctrl) in enumerate(zip(model.nodes, controllers)):
        pw = [(j, w) for j, _, w in model.layout(i)]
        locs.append(close_local(plant, ctrl, pw))
    return NetworkModel(top, [c.subsystem for c in locs]), locs


def controller_network(model: NetworkModel, controllers) -> NetworkModel:
    """Controllers as a network on their own channels, mapping ``y`` (as d) to ``u`` (as z)."""
    ctop = _controller_topology(model, controllers)
    nodes = []
    for c in controllers:
        b = c.blocks()
        nodes.append(SubsystemRealization.from_blocks(
            c.k, c.nC, c.p, c.m,
            A_TT=b["A_TT"], A_TS=b["A_TS"], B_Td=b["B_T"],
            A_ST=b["A_ST"], A_SS=b["A_SS"], B_Sd=b["B_S"],
            C_zT=b["C_T"], C_zS=b["C_S"], D_zd=b["D"]))
    return NetworkModel(ctop, nodes)


def flat_controller(model: NetworkModel, controllers) -> FlatStateSpace:
    """Flattened controller network mapping all ``y`` to all ``u``."""
    cnet = controller_network(model, controllers)
    return FlatStateSpace(*_eliminate(cnet, ("d",), ("z",)))


def feedback_interconnect(plant: GeneralizedPlant, ctrl: FlatStateSpace) -> FlatStateSpace:
    """Lower feedback ``u = K y`` of a flat plant with a flat controller."""
    A, B1, B2, C1, C2 = plant.A, plant.B1, plant.B2, plant.C1, plant.C2
    D11, D12, D21 = plant.D11, plant.D12, plant.D21
    Ak, Bk, Ck, Dk = ctrl.A, ctrl.B, ctrl.C, ctrl.D
    Acl = np.block([[A + B2 @ Dk @ C2, B2 @ Ck], [Bk @ C2, Ak]])
    Bcl = np.vstack([B1 + B2 @ Dk @ D21, Bk @ D21])
    Ccl = np.hstack([C1 + D12 @ Dk @ C2, D12 @ Ck])
    Dcl = D11 + D12 @ Dk @ D21
    return FlatStateSpace(Acl, Bcl, Ccl, Dcl)
