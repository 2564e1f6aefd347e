"""Oscillator networks, closed-loop simulation and the scaling benchmark."""

from __future__ import annotations

import csv
import faulthandler
import io
import multiprocessing as mp
import os
import resource
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analysis import AnalysisCertificate, MultiplierSet
from .errors import Disth2Error, IllPosed, Infeasible
from .lyapunov import spectral_radius
from .netmodel import (
    NetworkModel,
    SubsystemRealization,
    Topology,
    assemble_generalized,
    canonical_channel_layout,
    controller_network,
    feedback_interconnect,
    flat_controller,
    well_posed,
)
from .sdp import solve
from .synthesis.central import build_central_problem, finish_central
from .synthesis.drivers import synthesize_distributed
from .synthesis.existence import build_existence_problem, node_lmi_dimensions

__all__ = [
    "OscillatorParams",
    "gen_oscillator",
    "triangle_params",
    "random_cycle_params",
    "passive_pair",
    "example_one",
    "example_one_certificate",
    "SimulationResult",
    "simulate_closed_loop",
    "BenchRow",
    "bench_scaling",
    "rows_to_csv",
    "parse_disturbance",
    "settling_horizon",
    "BENCH_FIELDS",
]


@dataclass
class OscillatorParams:
    """Inertia ``m``, damping ``b`` per node, stiffness per edge, sample time ``T``.

    ``k`` maps unordered 0-based node pairs to the stiffness.
    """

    m: Sequence[float]
    b: Sequence[float]
    k: dict
    T: float = 0.1
    seed: Optional[int] = None

    def __post_init__(self):
        self.m = [float(v) for v in self.m]
        self.b = [float(v) for v in self.b]
        self.k = {(min(i, j), max(i, j)): float(v) for (i, j), v in self.k.items()}
        if len(self.m) != len(self.b):
            raise ValueError("m and b must have one entry per node")
        if any(v <= 0 for v in self.m) or any(v < 0 for v in self.b):
            raise ValueError("need m > 0 and b >= 0")
        if any(v <= 0 for v in self.k.values()) or self.T <= 0:
            raise ValueError("need k > 0 and T > 0")

    @property
    def topology(self) -> Topology:
        return Topology(len(self.m), {e: 1 for e in self.k})


def gen_oscillator(params: OscillatorParams) -> NetworkModel:
    """Zero-order-hold model with the first-order exponential approximation.

    Node states are ``(theta, theta_dot)``; each neighbour channel carries the
    neighbour's angle, the measurement is the own angle and the performance
    output is the full state.
    """
    top = params.topology
    T = params.T
    nodes = []
    for i in range(top.node_count):
        m, b = params.m[i], params.b[i]
        lay = canonical_channel_layout(top, i)
        ks = [params.k[(min(i, j), max(i, j))] for j, _, _ in lay]
        ksum = sum(ks)
        n = len(lay)
        A_TT = np.array([[1.0, T], [-ksum * T / m, 1.0 - b * T / m]])
        A_TS = np.zeros((2, n))
        A_TS[1, :] = np.array(ks) * T / m
        A_ST = np.tile([[1.0, 0.0]], (n, 1))
        B = np.array([[0.0], [T / m]])
        nodes.append(SubsystemRealization.from_blocks(
            2, n, 1, 2, 1, 1,
            A_TT=A_TT, A_TS=A_TS, A_ST=A_ST, B_Td=B, B_Tu=B,
            C_zT=np.eye(2), C_yT=np.array([[1.0, 0.0]])))
    return NetworkModel(top, nodes)


def triangle_params() -> OscillatorParams:
    return OscillatorParams([3.0, 1.0, 2.0], [2.0, 1.0, 4.0],
                            {(0, 1): 1.0, (1, 2): 1.0, (0, 2): 1.0})


def random_cycle_params(L: int, seed: int, T: float = 0.1) -> OscillatorParams:
    """Cycle network with ``m ~ U(1,2)``, ``b ~ U(2,3)``, ``k ~ U(1,2)``."""
    rng = np.random.default_rng(seed)
    m = rng.uniform(1, 2, L)
    b = rng.uniform(2, 3, L)
    top = Topology.cycle(L)
    k = {e: v for e, v in zip(top.edges, rng.uniform(1, 2, len(top.edges)))}
    return OscillatorParams(m, b, k, T, seed)


def passive_pair(a: float = 1.2, g: float = 0.5, delta: float = 1.0) -> NetworkModel:
    """Two scalar nodes whose channels admit the passivity multipliers.

    ``x+ = a x + g s + u + d`` and ``o = g x -/+ delta s`` on nodes 1 and 2,
    ``y = x`` and ``z = (x, u)``.  The opposite feedthrough signs match the
    orientation of the neutral supply on the single edge.
    """
    nodes = []
    for sgn in (-1.0, 1.0):
        nodes.append(SubsystemRealization.from_blocks(
            1, 1, 1, 2, 1, 1,
            A_TT=[[a]], A_TS=[[g]], A_ST=[[g]], A_SS=[[sgn * delta]],
            B_Td=[[1.0]], B_Tu=[[1.0]], C_zT=[[1.0], [0.0]], D_zu=[[0.0], [1.0]],
            C_yT=[[1.0]]))
    return NetworkModel(Topology(2, {(0, 1): 1}), nodes)


def example_one() -> NetworkModel:
    """Two identical scalar nodes ``x+ = x/2 + s/10 + d``, ``o = x``, ``z = x``."""
    node = SubsystemRealization.from_blocks(
        1, 1, 1, 1, A_TT=[[0.5]], A_TS=[[0.1]], A_ST=[[1.0]], B_Td=[[1.0]], C_zT=[[1.0]])
    return NetworkModel(Topology(2, {(0, 1): 1}), [node, node])


def example_one_certificate(gamma: float = 1.9):
    """Storage ``7/4``, weight ``20`` and scales ``X11 = -1/5``, ``X12 = 0`` on every node."""
    mult = MultiplierSet.uniform(Topology(2, {(0, 1): 1}), -0.2, 0.0)
    return AnalysisCertificate([np.array([[1.75]])] * 2, [20.0, 20.0], mult, gamma)


# ---------------------------------------------------------------------------
# simulation

@dataclass
class SimulationResult:
    """Closed-loop trajectories; row ``k`` of each array is time step ``k``.

    ``x`` and ``xi`` have ``horizon + 1`` rows, the signals ``u``, ``z`` and
    ``d`` have ``horizon`` rows.  ``offsets`` maps each signal name to the
    per-node column offsets.
    """

    x: np.ndarray
    xi: np.ndarray
    u: np.ndarray
    z: np.ndarray
    d: np.ndarray
    offsets: dict
    seed: Optional[int]
    tail_start: int
    tail_mean_z2: float

    @property
    def horizon(self) -> int:
        return self.z.shape[0]

    def node(self, signal: str, i: int) -> np.ndarray:
        off = self.offsets[signal]
        return getattr(self, signal)[:, off[i]:off[i + 1]]

    def state_norms(self) -> np.ndarray:
        return np.linalg.norm(np.hstack([self.x, self.xi]), axis=1)

    def to_csv(self) -> str:
        """Comma-separated series: ``k`` followed by every signal component."""
        L = len(self.offsets["x"]) - 1
        head = ["k"]
        cols = []
        for sig in ("x", "xi", "u", "z", "d"):
            for i in range(L):
                blk = self.node(sig, i)
                if sig in ("x", "xi"):
                    blk = blk[:-1]
                for c in range(blk.shape[1]):
                    head.append(f"{sig}{i + 1}_{c + 1}")
                    cols.append(blk[:, c])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head)
        for k in range(self.horizon):
            w.writerow([k] + [repr(float(c[k])) for c in cols])
        return buf.getvalue()


def parse_disturbance(spec: str) -> float:
    """Standard deviation for ``"zero"`` or ``"white(var)"``."""
    s = spec.strip().lower()
    if s in ("zero", "none", "0"):
        return 0.0
    if s.startswith("white(") and s.endswith(")"):
        var = float(s[6:-1])
        if var < 0:
            raise ValueError("noise variance must be nonnegative")
        return float(np.sqrt(var))
    raise ValueError(f"unknown disturbance spec {spec!r}")


def _offsets(sizes):
    return np.concatenate([[0], np.cumsum(sizes)]).astype(int)


def settling_horizon(rho: float, factor: float = 10.0) -> int:
    """``factor`` times the slowest time constant ``-1/log(rho)`` in steps."""
    if rho <= 0:
        return 1
    if rho >= 1:
        raise ValueError("closed loop is not stable")
    return int(np.ceil(factor * -1.0 / np.log(rho)))


def simulate_closed_loop(model: NetworkModel, controllers, x0=None, xi0=None,
                         disturbance: str = "white(1)", horizon: int = 2000,
                         seed: Optional[int] = None) -> SimulationResult:
    """Iterate the flattened closed loop of plant network and controller network.

    The horizon is raised to ten slowest time constants if shorter; the
    tail window is its second half.

    Raises
    ------
    IllPosed
    """
    cnet = controller_network(model, controllers)
    for net, what in ((model, "plant"), (cnet, "controller")):
        ok, rc = well_posed(net)
        if not ok:
            raise IllPosed(f"{what} interconnection is ill-posed (rcond={rc:.3g})")
    plant = assemble_generalized(model)
    ctrl = flat_controller(model, controllers)
    cl = feedback_interconnect(plant, ctrl)
    nx, nk = plant.A.shape[0], ctrl.A.shape[0]
    sd = parse_disturbance(disturbance)
    rho = spectral_radius(cl.A)
    if rho < 1:
        horizon = max(int(horizon), settling_horizon(rho))
    offs = {
        "x": _offsets([nd.k for nd in model.nodes]),
        "xi": _offsets([c.k for c in controllers]),
        "u": _offsets([nd.m for nd in model.nodes]),
        "z": _offsets([nd.q for nd in model.nodes]),
        "d": _offsets([nd.f for nd in model.nodes]),
    }
    rng = np.random.default_rng(seed)
    nd_ = plant.B1.shape[1]
    d = sd * rng.standard_normal((horizon, nd_)) if sd else np.zeros((horizon, nd_))
    state = np.zeros((horizon + 1, nx + nk))
    state[0, :nx] = 0.0 if x0 is None else np.asarray(x0, float).ravel()
    state[0, nx:] = 0.0 if xi0 is None else np.asarray(xi0, float).ravel()
    A, B, C, D = cl.A, cl.B, cl.C, cl.D
    for k in range(horizon):
        state[k + 1] = A @ state[k] + B @ d[k]
    z = state[:-1] @ C.T + d @ D.T
    y = state[:-1, :nx] @ plant.C2.T + d @ plant.D21.T
    u = state[:-1, nx:] @ ctrl.C.T + y @ ctrl.D.T
    tail = horizon // 2
    z2 = float(np.mean(np.sum(z[tail:] ** 2, axis=1))) if horizon else 0.0
    return SimulationResult(state[:, :nx], state[:, nx:], u, z, d, offs, seed, tail, z2)


# ---------------------------------------------------------------------------
# scaling benchmark

BENCH_FIELDS = ("L", "mode", "seed", "status", "wall_ms", "achieved_gamma", "verified")


@dataclass
class BenchRow:
    L: int
    mode: str
    seed: int
    status: str  # ok | infeasible | numerical-failure | over-budget | aborted | failed
    wall_ms: float
    achieved_gamma: float = float("nan")
    verified: bool = False
    note: str = ""
    lmi_dims: Optional[list] = field(default=None, repr=False)

    def as_tuple(self):
        return tuple(getattr(self, f) for f in BENCH_FIELDS)


def rows_to_csv(rows: Sequence[BenchRow], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(BENCH_FIELDS)
    for r in rows:
        w.writerow([r.L, r.mode, r.seed, r.status, f"{r.wall_ms:.3f}",
                    "" if not np.isfinite(r.achieved_gamma) else repr(float(r.achieved_gamma)),
                    int(bool(r.verified))])
    return buf.getvalue()


def _status_of(sol_status: str) -> str:
    return {"feasible": "ok", "time-limit": "over-budget"}.get(sol_status, sol_status)


def _bench_distributed(L, gamma, seed, time_budget, verify_max):
    model = gen_oscillator(random_cycle_params(L, seed))
    ep = build_existence_problem(model, gamma, "distributed")
    dims = node_lmi_dimensions(ep)
    t0 = time.perf_counter()
    sol = solve(ep.problem, time_limit=time_budget)
    wall = 1e3 * (time.perf_counter() - t0)
    row = BenchRow(L, "distributed", seed, _status_of(sol.status), wall, lmi_dims=dims)
    if sol.feasible and L <= verify_max:
        try:
            # the timed solve is the first level; tighter levels only on failure
            res = synthesize_distributed(model, gamma)
            row.achieved_gamma, row.verified = res.report.h2, bool(res.verified)
            lv = res.timings.get("levels", [gamma])
            if len(lv) > 1:
                row.note = f"certified at level {lv[-1]:.6g}"
        except Exception as exc:  # recorded per row
            row.status, row.note = "failed", f"{type(exc).__name__}: {exc}"
    return row


def _central_worker(L, gamma, seed, time_budget, mem_bytes, conn):
    faulthandler.disable()  # an abort on memory exhaustion is an expected outcome
    if mem_bytes:
        resource.setrlimit(resource.RLIMIT_AS, (mem_bytes, mem_bytes))
    try:
        model = gen_oscillator(random_cycle_params(L, seed))
        plant = assemble_generalized(model)
        prob = build_central_problem(plant, gamma)
        conn.send(("solving", time.perf_counter()))
        t0 = time.perf_counter()
        sol = solve(prob, time_limit=time_budget)
        solve_s = time.perf_counter() - t0
        if sol.status == "time-limit":
            conn.send(("over-budget", solve_s, float("nan"), False, "solver time limit"))
        else:
            res = finish_central(plant, sol, gamma, {"solve_s": solve_s})
            conn.send(("ok", solve_s, res.h2, bool(res.verified), ""))
    except Disth2Error as exc:
        status = "infeasible" if isinstance(exc, Infeasible) else "numerical-failure"
        conn.send((status, float("nan"), float("nan"), False, str(exc)))
    except MemoryError as exc:
        conn.send(("aborted", float("nan"), float("nan"), False, f"MemoryError: {exc}"))
    conn.close()


def default_memory_limit() -> Optional[int]:
    """Eighty percent of physical memory, if it can be determined."""
    try:
        return int(0.8 * os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES"))
    except (ValueError, OSError, AttributeError):
        return None


def _bench_central(L, gamma, seed, time_budget, mem_bytes):
    """Run the centralized solve in a child process so that a budget overrun
    or a solver abort on memory exhaustion cannot take the caller down.

    Times count from the start of the conic solve, as for the distributed
    rows.  A run without a result reports its elapsed solve time, which
    bounds the solve time from below.
    """
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    recv, send = ctx.Pipe(duplex=False)
    t_fork = time.perf_counter()
    proc = ctx.Process(target=_central_worker, args=(L, gamma, seed, time_budget, mem_bytes, send))
    proc.start()
    send.close()
    t_solve = None
    msg = None
    deadline = t_fork + time_budget + 5.0
    while msg is None:
        if not recv.poll(max(deadline - time.perf_counter(), 0.0)):
            break
        try:
            m = recv.recv()
        except EOFError:
            break
        if m[0] == "solving":
            t_solve = m[1]
            deadline = t_solve + time_budget + 5.0
        else:
            msg = m
    elapsed = 1e3 * (time.perf_counter() - (t_solve if t_solve is not None else t_fork))
    if msg is None:
        if proc.is_alive():
            proc.terminate()
        proc.join()
        if proc.exitcode not in (None, 0) and elapsed < 1e3 * time_budget:
            stage = "solve" if t_solve is not None else "setup"
            return BenchRow(L, "central", seed, "aborted", elapsed,
                            note=f"solver process died during {stage} "
                                 f"with exit code {proc.exitcode}")
        return BenchRow(L, "central", seed, "over-budget", elapsed,
                        note=f"no solution within {time_budget:g} s")
    proc.join()
    status, solve_s, h2, verified, note = msg
    wall = 1e3 * solve_s if np.isfinite(solve_s) else elapsed
    return BenchRow(L, "central", seed, status, wall, h2, verified, note)


def bench_scaling(sizes: Sequence[int], gamma: float = 10.0,
                  modes: Sequence[str] = ("distributed", "central"),
                  time_budget: float = 600.0, seed: int = 20240601,
                  verify_max: int = 50, memory_limit: Optional[int] = -1,
                  parallel: bool = False) -> list[BenchRow]:
    """Time the existence solves on seeded cycle oscillator networks.

    ``wall_ms`` is the conic solve time (assembly and margin re-check
    included).  Distributed rows with ``L <= verify_max`` are also
    reconstructed and verified, and report the achieved flat H2 norm.
    Centralized attempts run in a child process capped at ``time_budget``
    seconds and ``memory_limit`` bytes (``-1`` picks a default, ``None``
    disables the cap); attempts that end without a solution are kept as
    ``over-budget`` or ``aborted`` rows.  ``parallel`` runs distributed
    rows concurrently and is meant for non-timing runs.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    bad = set(modes) - {"distributed", "central"}
    if bad:
        raise ValueError(f"unknown modes {sorted(bad)}")
    mem = default_memory_limit() if memory_limit == -1 else memory_limit
    dist = {}
    if "distributed" in modes and parallel:
        with ProcessPoolExecutor() as ex:
            futs = {L: ex.submit(_bench_distributed, L, gamma, seed, time_budget, verify_max)
                    for L in sizes}
            dist = {L: f.result() for L, f in futs.items()}
    rows = []
    for L in sizes:
        for mode in modes:
            if mode == "distributed":
                rows.append(dist.get(L) or _bench_distributed(L, gamma, seed, time_budget,
                                                              verify_max))
            else:
                rows.append(_bench_central(L, gamma, seed, time_budget, mem))
    return rows
