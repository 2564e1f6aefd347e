"""Small modeling layer for structured SDP feasibility problems.

Variables are symmetric, rectangular or scalar.  A matrix constraint is an
affine symmetric expression

    C + sum_k  c_k (L_k' V_k R_k + R_k' V_k' L_k)  +  sum_s  v_s M_s

required to be ``>= eps I`` or ``<= -eps I``.  Scalar constraints are affine
inequalities and equalities.  The assembled cone program

    minimize q' x   subject to   A x + s = b,   s in K

is handed to Clarabel.  Feasible answers are re-checked by eigenvalue
computations on the returned point before being reported as such.

PSD blocks use Clarabel's triangle convention: upper triangle, column-major,
off-diagonal entries scaled by ``sqrt(2)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import InfeasibleAtHi, NumericalFailure

__all__ = [
    "SdpVariable",
    "AffineMatrixExpr",
    "SdpProblem",
    "SdpSolution",
    "svec",
    "smat",
    "solve",
    "bisect_gamma",
    "infeasibility_radius",
    "EPS_STRICT",
]

EPS_STRICT = 1e-7
SQRT2 = np.sqrt(2.0)


def _triu_index(n):
    """Row/column indices of the upper triangle in column-major order."""
    lr, lc = np.tril_indices(n)  # lower triangle row-major == upper column-major
    return lc, lr


def svec(M) -> np.ndarray:
    """Scaled half-vectorization used by the PSD cone."""
    M = np.asarray(M, dtype=float)
    r, c = _triu_index(M.shape[0])
    v = M[r, c].copy()
    v[r != c] *= SQRT2
    return v


def smat(v, n=None) -> np.ndarray:
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float)
    if n is None:
        n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    r, c = _triu_index(n)
    w = v.copy()
    w[r != c] /= SQRT2
    M = np.zeros((n, n))
    M[r, c] = w
    M[c, r] = w
    return M


@dataclass(frozen=True)
class SdpVariable:
    """Decision variable; ``offset`` locates it in the stacked unknown vector."""

    name: str
    kind: str  # "symmetric" | "rectangular" | "scalar"
    shape: tuple
    offset: int

    @property
    def size(self) -> int:
        if self.kind == "symmetric":
            n = self.shape[0]
            return n * (n + 1) // 2
        if self.kind == "rectangular":
            return self.shape[0] * self.shape[1]
        return 1

    def vec_map(self) -> sp.csc_matrix:
        """Sparse map from the variable's unknowns to column-major ``vec(V)``."""
        if self.kind == "symmetric":
            n = self.shape[0]
            r, c = _triu_index(n)
            p = np.arange(r.size)
            rows = np.concatenate([r + n * c, (c + n * r)[r != c]])
            cols = np.concatenate([p, p[r != c]])
            return sp.csc_matrix((np.ones(rows.size), (rows, cols)), shape=(n * n, r.size))
        if self.kind == "rectangular":
            m = self.size
            return sp.identity(m, format="csc")
        return sp.csc_matrix(np.ones((1, 1)))

    def unpack(self, x) -> np.ndarray:
        vals = np.asarray(x[self.offset:self.offset + self.size], dtype=float)
        if self.kind == "symmetric":
            n = self.shape[0]
            r, c = _triu_index(n)
            M = np.zeros((n, n))
            M[r, c] = vals
            M[c, r] = vals
            return M
        if self.kind == "rectangular":
            return vals.reshape(self.shape, order="F")
        return float(vals[0])


@dataclass
class AffineMatrixExpr:
    """Symmetric affine expression of size ``dim``."""

    dim: int
    const: np.ndarray = None
    terms: list = field(default_factory=list)   # (coef, L, var, R)
    scalar_terms: list = field(default_factory=list)  # (var, M)

    def __post_init__(self):
        if self.const is None:
            self.const = np.zeros((self.dim, self.dim))
        self.const = np.asarray(self.const, dtype=float)

    def add_const(self, C):
        C = np.asarray(C, dtype=float)
        self.const = self.const + 0.5 * (C + C.T)
        return self

    def add(self, var: SdpVariable, L, R=None, coef=1.0):
        """Add ``coef * (L' V R + R' V' L)``; ``L`` and ``R`` have ``dim`` columns.

        For a symmetric ``V`` and ``R = L`` this adds ``2 coef L' V L``; use
        :meth:`add_congruence` for the single-sided form.
        """
        if var.kind == "scalar":
            raise TypeError("use add_scalar for scalar variables")
        L = np.asarray(L, dtype=float)
        R = L if R is None else np.asarray(R, dtype=float)
        if L.shape != (var.shape[0], self.dim) or R.shape != (var.shape[1], self.dim):
            raise ValueError(f"factor shapes {L.shape}, {R.shape} do not fit {var.name}")
        if coef != 0 and np.any(L) and np.any(R):
            self.terms.append((float(coef), L, var, R))
        return self

    def add_congruence(self, var: SdpVariable, L, coef=1.0):
        """Add ``coef * L' V L`` for a symmetric variable."""
        return self.add(var, L, L, 0.5 * coef)

    def add_scalar(self, var: SdpVariable, M):
        M = np.asarray(M, dtype=float)
        if M.shape != (self.dim, self.dim):
            raise ValueError("scalar coefficient has the wrong size")
        if np.any(M):
            self.scalar_terms.append((var, 0.5 * (M + M.T)))
        return self

    def variables(self):
        return [t[2] for t in self.terms] + [t[0] for t in self.scalar_terms]

    def evaluate(self, values: dict) -> np.ndarray:
        out = self.const.copy()
        for coef, L, var, R in self.terms:
            T = L.T @ values[var.name] @ R
            out += coef * (T + T.T)
        for var, M in self.scalar_terms:
            out += values[var.name] * M
        return 0.5 * (out + out.T)

    def coefficient_matrix(self, nvars: int) -> sp.csr_matrix:
        """Sparse ``G`` with ``svec(expr - const) = G x``."""
        n = self.dim
        r, c = _triu_index(n)
        up = r + n * c
        lo = c + n * r
        scale = np.where(r == c, 1.0, SQRT2)
        blocks = []
        for coef, L, var, R in self.terms:
            K = sp.kron(sp.csr_matrix(R.T), sp.csr_matrix(L.T), format="csr")
            G = (K @ var.vec_map()).tocsr()
            S = coef * (G[up] + G[lo])
            S = sp.diags(scale) @ S
            blocks.append((var.offset, S.tocoo()))
        for var, M in self.scalar_terms:
            col = (M[r, c] * scale)[:, None]
            blocks.append((var.offset, sp.coo_matrix(col)))
        rows, cols, vals = [], [], []
        for off, S in blocks:
            rows.append(S.row)
            cols.append(S.col + off)
            vals.append(S.data)
        if not rows:
            return sp.csr_matrix((r.size, nvars))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(r.size, nvars))


@dataclass
class _MatrixConstraint:
    name: str
    expr: AffineMatrixExpr
    sense: str  # ">" means expr >= eps I, "<" means expr <= -eps I
    eps: float


@dataclass
class _ScalarConstraint:
    name: str
    coeffs: list  # (var, coefficient array shaped like var)
    const: float
    sense: str  # "<=" (expr <= -eps) or "==" (expr == 0)
    eps: float


class SdpProblem:
    """Container for variables, constraints and a linear objective."""

    def __init__(self, name="sdp", eps_strict=EPS_STRICT):
        self.name = name
        self.eps_strict = eps_strict
        self.variables: dict[str, SdpVariable] = {}
        self.matrix_constraints: list[_MatrixConstraint] = []
        self.scalar_constraints: list[_ScalarConstraint] = []
        self.objective: list = []  # (var, coefficient shaped like var)
        self._nvars = 0

    @property
    def nvars(self) -> int:
        return self._nvars

    def _new(self, name, kind, shape):
        if name in self.variables:
            raise ValueError(f"duplicate variable {name}")
        v = SdpVariable(name, kind, tuple(shape), self._nvars)
        self.variables[name] = v
        self._nvars += v.size
        return v

    def symmetric(self, name, n) -> SdpVariable:
        return self._new(name, "symmetric", (n, n))

    def rectangular(self, name, rows, cols) -> SdpVariable:
        return self._new(name, "rectangular", (rows, cols))

    def scalar(self, name) -> SdpVariable:
        return self._new(name, "scalar", ())

    def expr(self, dim) -> AffineMatrixExpr:
        return AffineMatrixExpr(dim)

    def _check_vars(self, vars_):
        for v in vars_:
            if self.variables.get(v.name) is not v:
                raise ValueError(f"variable {v.name} is not declared in this problem")

    def add_lmi(self, expr: AffineMatrixExpr, sense: str, name=None, eps=None, scale=None):
        """Require ``expr >= eps I`` (sense ``">"``) or ``expr <= -eps I`` (``"<"``).

        The default margin is ``eps_strict * scale`` with ``scale`` one plus
        the largest absolute coefficient of the expression.
        """
        if sense not in ("<", ">"):
            raise ValueError("sense must be '<' or '>'")
        self._check_vars(expr.variables())
        if eps is None:
            if scale is None:
                mags = [np.max(np.abs(expr.const), initial=0.0)]
                mags += [abs(c) * np.max(np.abs(L), initial=0) * np.max(np.abs(R), initial=0)
                         for c, L, _, R in expr.terms]
                mags += [np.max(np.abs(M)) for _, M in expr.scalar_terms]
                scale = 1.0 + max(mags)
            eps = self.eps_strict * scale
        name = name or f"lmi{len(self.matrix_constraints)}"
        self.matrix_constraints.append(_MatrixConstraint(name, expr, sense, float(eps)))
        return name

    def add_linear(self, coeffs, const=0.0, sense="<=", name=None, eps=None):
        """Require ``sum <C_k, V_k> + const <= -eps`` or ``== 0``.

        ``coeffs`` is a list of ``(variable, coefficient)``; for matrix
        variables the coefficient has the variable's shape (trace inner
        product, symmetric part taken for symmetric variables).
        """
        if sense not in ("<=", "=="):
            raise ValueError("sense must be '<=' or '=='")
        self._check_vars([v for v, _ in coeffs])
        if eps is None:
            eps = self.eps_strict if sense == "<=" else 0.0
        name = name or f"lin{len(self.scalar_constraints)}"
        self.scalar_constraints.append(
            _ScalarConstraint(name, [(v, np.asarray(c, float)) for v, c in coeffs],
                              float(const), sense, float(eps)))
        return name

    def minimize(self, coeffs):
        """Linear objective ``sum <C_k, V_k>``."""
        self._check_vars([v for v, _ in coeffs])
        self.objective = [(v, np.asarray(c, float)) for v, c in coeffs]

    # assembly ---------------------------------------------------------------

    @staticmethod
    def _linear_row(var: SdpVariable, C) -> tuple[np.ndarray, np.ndarray]:
        """Indices and values of ``<C, V>`` in terms of the variable's unknowns."""
        if var.kind == "scalar":
            return np.array([var.offset]), np.array([float(C)])
        if var.kind == "rectangular":
            c = np.asarray(C, float).reshape(var.shape).ravel(order="F")
            return var.offset + np.arange(c.size), c
        n = var.shape[0]
        C = np.asarray(C, float).reshape(n, n)
        S = C + C.T
        r, c = _triu_index(n)
        vals = np.where(r == c, C[r, c], S[r, c])
        return var.offset + np.arange(r.size), vals

    def assemble(self):
        """Return ``(q, A, b, cones)`` in Clarabel's standard form."""
        n = self._nvars
        q = np.zeros(n)
        for v, C in self.objective:
            idx, vals = self._linear_row(v, C)
            np.add.at(q, idx, vals)
        A_blocks, b_parts, cones = [], [], []
        eqs = [c for c in self.scalar_constraints if c.sense == "=="]
        ineqs = [c for c in self.scalar_constraints if c.sense == "<="]
        for group, cone in ((eqs, "zero"), (ineqs, "nonneg")):
            if not group:
                continue
            rows, cols, vals, b = [np.zeros(0, int)], [np.zeros(0, int)], [np.zeros(0)], []
            for k, con in enumerate(group):
                for v, C in con.coeffs:
                    idx, vv = self._linear_row(v, C)
                    rows.append(np.full(idx.size, k))
                    cols.append(idx)
                    vals.append(vv)
                b.append(-con.const - con.eps)
            A_blocks.append(sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(len(group), n)))
            b_parts.append(np.array(b))
            cones.append((cone, len(group)))
        for con in self.matrix_constraints:
            G = con.expr.coefficient_matrix(n)
            eye = np.eye(con.expr.dim)
            if con.sense == ">":
                # s = svec(C + Gx - eps I) = b - A x
                A_blocks.append(-G)
                b_parts.append(svec(con.expr.const - con.eps * eye))
            else:
                A_blocks.append(G)
                b_parts.append(svec(-con.expr.const - con.eps * eye))
            cones.append(("psd", con.expr.dim))
        if A_blocks:
            A = sp.vstack(A_blocks, format="csc")
            b = np.concatenate(b_parts)
        else:
            A = sp.csc_matrix((0, n))
            b = np.zeros(0)
        return q, A, b, cones

    def values(self, x) -> dict:
        return {name: v.unpack(x) for name, v in self.variables.items()}

    def dump_triplets(self, path):
        """Write the cone program as text.

        Layout: a header ``nvars nrows nnz``; the line ``q`` followed by
        ``nvars`` values; the line ``b`` followed by ``nrows`` values; the
        line ``cones`` followed by one ``kind size`` line per cone in row
        order (``zero``, ``nonneg``, ``psd`` with the matrix order); the line
        ``A`` followed by ``row col value`` triplets (0-based).
        """
        q, A, b, cones = self.assemble()
        A = A.tocoo()
        with open(path, "w") as fh:
            fh.write(f"{self._nvars} {A.shape[0]} {A.nnz}\n")
            fh.write("q\n")
            fh.writelines(f"{float(v)!r}\n" for v in q)
            fh.write("b\n")
            fh.writelines(f"{float(v)!r}\n" for v in b)
            fh.write("cones\n")
            fh.writelines(f"{k} {s}\n" for k, s in cones)
            fh.write("A\n")
            fh.writelines(f"{int(i)} {int(j)} {float(v)!r}\n"
                          for i, j, v in zip(A.row, A.col, A.data))


@dataclass
class SdpSolution:
    status: str  # "feasible" | "infeasible" | "numerical-failure" | "time-limit"
    values: dict
    margins: dict
    x: Optional[np.ndarray] = None
    solver_status: str = ""
    solve_time: float = 0.0
    iterations: int = 0
    objective: float = float("nan")
    infeasibility_radius: float = float("nan")

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def __getitem__(self, name):
        return self.values[name]


def check_margins(problem: SdpProblem, values: dict, rel=1e-8) -> dict:
    """Achieved margins on the returned point (positive means satisfied).

    Matrix constraints are checked for strict definiteness with the relative
    threshold ``rel * (1 + ||M||)``; scalar constraints with their own ``eps``
    halved.
    """
    out = {}
    for con in problem.matrix_constraints:
        M = con.expr.evaluate(values)
        w = np.linalg.eigvalsh(M) if M.size else np.array([0.0])
        thr = rel * (1.0 + np.max(np.abs(w)))
        out[con.name] = float(w[0] - thr) if con.sense == ">" else float(-w[-1] - thr)
        if M.size == 0:
            out[con.name] = np.inf
    for con in problem.scalar_constraints:
        val = con.const
        for v, C in con.coeffs:
            x = values[v.name]
            val += float(np.sum(np.asarray(C).reshape(np.shape(x)) * x)) if np.ndim(x) else float(C) * x
        if con.sense == "<=":
            out[con.name] = -val
        else:
            out[con.name] = -abs(val) + 1e-7 * (1 + abs(con.const))
    return out


_STATUS = {
    "Solved": "feasible",
    "AlmostSolved": "feasible",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "MaxTime": "time-limit",
}


def infeasibility_radius(A, b, z, cones) -> float:
    """Radius of the ball around the origin that ``z`` proves free of feasible points.

    ``z`` is first projected on the dual cone.  For feasible ``x`` with slack
    ``s = b - A x`` in the cone, ``0 <= z's = b'z - (A'z)'x``, so ``b'z < 0``
    forces ``||x|| >= |b'z| / ||A'z||``.  Returns 0 when ``z`` proves nothing.
    """
    z = np.array(z, dtype=float)
    off = 0
    for kind, size in cones:
        if kind == "psd":
            m = size * (size + 1) // 2
            w, Q = np.linalg.eigh(smat(z[off:off + m], size))
            z[off:off + m] = svec((Q * np.maximum(w, 0.0)) @ Q.T)
            off += m
        else:
            if kind == "nonneg":
                z[off:off + size] = np.maximum(z[off:off + size], 0.0)
            off += size
    bz = float(b @ z)
    if not bz < 0:
        return 0.0
    atz = float(np.linalg.norm(A.T @ z))
    return np.inf if atz == 0 else -bz / atz


def solve(problem: SdpProblem, tol=1e-9, max_iter=200, time_limit=None,
          verbose=False, check_rel=1e-8, infeas_radius=1e4) -> SdpSolution:
    """Solve with Clarabel and re-check every constraint on the returned point.

    A solver-reported solution that fails the independent check is reported
    as ``numerical-failure``.  When the solver stops without a verdict, the
    last dual iterate is tested as an infeasibility certificate; a proof that
    no feasible point has norm below ``infeas_radius`` counts as infeasible.
    """
    import clarabel

    t0 = time.perf_counter()
    q, A, b, cones = problem.assemble()
    n = problem.nvars
    if n == 0:
        values = problem.values(np.zeros(0))
        margins = check_margins(problem, values, check_rel)
        ok = all(m > 0 for m in margins.values())
        return SdpSolution("feasible" if ok else "infeasible", values, margins, np.zeros(0))
    kinds = {"zero": clarabel.ZeroConeT, "nonneg": clarabel.NonnegativeConeT,
             "psd": clarabel.PSDTriangleConeT}
    cl_cones = [kinds[k](s) for k, s in cones]
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    if time_limit is not None:
        settings.time_limit = float(max(time_limit - (time.perf_counter() - t0), 1e-3))
    P = sp.csc_matrix((n, n))
    try:
        solver = clarabel.DefaultSolver(P, q, A.tocsc(), b, cl_cones, settings)
        res = solver.solve()
    except Exception as exc:  # solver-side failures carry no structured status
        raise NumericalFailure(f"conic solver raised: {exc}") from exc
    sstat = str(res.status).split(".")[-1]
    x = np.asarray(res.x, dtype=float)
    values = problem.values(x) if x.size == n else {}
    status = _STATUS.get(sstat, "numerical-failure")
    margins = {}
    radius = float("nan")
    if status == "feasible":
        margins = check_margins(problem, values, check_rel)
        if not all(m > 0 for m in margins.values()):
            status = "numerical-failure"
    elif status == "numerical-failure" and len(res.z) == A.shape[0]:
        radius = infeasibility_radius(A, b, res.z, cones)
        if radius >= infeas_radius:
            status = "infeasible"
    return SdpSolution(status, values, margins, x, sstat, time.perf_counter() - t0,
                       int(res.iterations), float(res.obj_val) if x.size else float("nan"),
                       radius)


def bisect_gamma(builder: Callable[[float], SdpProblem], lo: float, hi: float,
                 rel_tol: float = 1e-3, **solve_kw):
    """Smallest feasible ``gamma`` in ``[lo, hi]`` up to ``rel_tol``.

    ``builder`` maps a level to a problem whose feasibility is monotone in it.

    Returns
    -------
    (gamma, SdpSolution)

    Raises
    ------
    InfeasibleAtHi
    """
    if not 0 < lo <= hi:
        raise ValueError("need 0 < lo <= hi")
    best = solve(builder(hi), **solve_kw)
    if not best.feasible:
        raise InfeasibleAtHi(f"problem is not feasible at gamma={hi} ({best.status})")
    sol_lo = solve(builder(lo), **solve_kw)
    if sol_lo.feasible:
        return lo, sol_lo
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        s = solve(builder(mid), **solve_kw)
        if s.feasible:
            hi, best = mid, s
        else:
            lo = mid
    return hi, best
