"""Controller construction from a feasible existence certificate.

Every step is local to a node or to a pair of neighbours.  The storage is
completed to the controller state, the interconnection scales are extended
to the controller channels, and ``Theta`` comes from a quadratic matrix
inequality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from ..errors import (
    EliminationPreconditionFailed,
    InertiaMismatch,
    NearSingularCompletion,
    ReconstructionFailed,
    SingularPi,
    SingularY,
)
from ..netmodel import block_diag
from .existence import kernel_basis

__all__ = [
    "recover_rho",
    "reconstruct_XK",
    "PairExtension",
    "extend_multipliers",
    "assemble_Pi",
    "elimination_margins",
    "QmiResult",
    "qmi_residual",
    "solve_theta_qmi",
]


def recover_rho(alpha: float, beta: float) -> float:
    """Single performance weight from the two convexified ones."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    return float(alpha) if alpha * beta >= 1.0 else 1.0 / float(beta)


def reconstruct_XK(X, Y, rtol=1e-10, return_factors=False):
    """Storage on ``(x, xi)`` whose upper-left block is ``X`` and whose inverse has ``Y`` there.

    Uses ``M = I - X Y`` and ``N = I``; when ``M`` is poorly conditioned the
    factors are balanced through the SVD (``M = U S^(1/2)``, ``N = V S^(1/2)``).

    Raises
    ------
    NearSingularCompletion
        If ``sigma_min(I - X Y) < rtol * scale``.
    """
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    k = X.shape[0]
    if k == 0:
        out = np.zeros((0, 0))
        return (out, out, out) if return_factors else out
    I = np.eye(k)
    MN = I - X @ Y
    U, s, Vt = np.linalg.svd(MN)
    scale = max(1.0, np.linalg.norm(X, 2) * np.linalg.norm(Y, 2))
    if s[-1] < rtol * scale:
        raise NearSingularCompletion(
            f"I - XY is nearly singular (sigma_min={s[-1]:.3g})", stage="completion")
    if s[-1] / s[0] > 1e-6:
        M, N = MN, I
    else:
        r = np.sqrt(s)
        M, N = U * r, Vt.T * r
    lhs = np.block([[Y, I], [N.T, np.zeros((k, k))]])
    rhs = np.block([[I, X], [np.zeros((k, k)), M.T]])
    XK = np.linalg.solve(lhs.T, rhs.T).T
    XK = 0.5 * (XK + XK.T)
    try:
        np.linalg.cholesky(XK)
    except np.linalg.LinAlgError as exc:
        raise NearSingularCompletion("completed storage is not positive definite",
                                     stage="completion") from exc
    return (XK, M, N) if return_factors else XK


@dataclass
class PairExtension:
    """Step-two output for a pair ``i > j`` (plant width ``n``, controller width ``3n``)."""

    i: int
    j: int
    XP: np.ndarray
    YP: np.ndarray
    Vbar_pos: np.ndarray
    Vbar_neg: np.ndarray
    M12: np.ndarray
    M22: np.ndarray
    eigenvalues: np.ndarray
    perturbed: int = 0

    @property
    def n(self) -> int:
        return self.XP.shape[0] // 2

    def families(self):
        """``(pc11_ij, pc12_ij, cp12_ij, pc11_ji, c11_ij, c12_ij, c11_ji)``."""
        n = self.n
        m12, m22 = self.M12, self.M22
        return (m12[:n, :3 * n], m12[:n, 3 * n:], m12[n:, :3 * n].T, -m12[n:, 3 * n:],
                m22[:3 * n, :3 * n], m22[:3 * n, 3 * n:], -m22[3 * n:, 3 * n:])

    def full_scale(self) -> np.ndarray:
        """Pair scale on ``(plant, controller)`` coordinates."""
        return np.block([[self.XP, self.M12], [self.M12.T, self.M22]])

    def residual(self) -> float:
        """Relative error of the rank split of ``X^P - (Y^P)^-1``."""
        D = self.XP - np.linalg.inv(self.YP)
        R = self.Vbar_pos @ self.Vbar_pos.T - self.Vbar_neg @ self.Vbar_neg.T
        return float(np.linalg.norm(D - R) / max(np.linalg.norm(D), 1e-300))


def extend_multipliers(XP, YP, i=0, j=0, zero_rtol=1e-9) -> PairExtension:
    """Split ``X^P - (Y^P)^-1`` into signed rank parts and tile them three times.

    The difference must have ``n`` positive and ``n`` negative eigenvalues.
    Eigenvalues below ``zero_rtol * ||.||`` in magnitude are moved to
    ``+-threshold`` so that the counts come out as ``(n, n)`` when possible.

    Raises
    ------
    SingularY
    InertiaMismatch
    """
    XP = np.asarray(XP, float)
    YP = np.asarray(YP, float)
    n2 = XP.shape[0]
    n = n2 // 2
    s = np.linalg.svd(YP, compute_uv=False) if n2 else np.zeros(0)
    if n2 and s[-1] <= 1e-12 * max(s[0], 1.0):
        raise SingularY(f"pair ({i + 1},{j + 1}): Y scale is singular", stage="scales")
    D = XP - np.linalg.inv(YP) if n2 else XP
    D = 0.5 * (D + D.T)
    lam, V = np.linalg.eigh(D)
    order = np.argsort(lam)[::-1]
    lam, V = lam[order], V[:, order]
    thr = zero_rtol * max(np.max(np.abs(lam), initial=0.0), 1e-300)
    pos = lam > thr
    neg = lam < -thr
    zero = ~(pos | neg)
    npos, nneg = int(pos.sum()), int(neg.sum())
    if npos > n or nneg > n:
        raise InertiaMismatch(
            f"pair ({i + 1},{j + 1}): inertia ({npos}, {nneg}) of the scale difference, "
            f"expected ({n}, {n}); eigenvalues {lam.tolist()}", stage="scales")
    # fill the missing counts with near-zero eigenvalues
    zi = np.flatnonzero(zero)
    need_pos = n - npos
    lam = lam.copy()
    lam[zi[:need_pos]] = thr
    lam[zi[need_pos:]] = -thr
    order = np.argsort(lam)[::-1]
    lam, V = lam[order], V[:, order]
    Vbar = V * np.sqrt(np.abs(lam))
    vp, vn = Vbar[:, :n], Vbar[:, n:]
    M12 = np.hstack([vp, vp, vp, vn, vn, vn]) / np.sqrt(3.0)
    M22 = block_diag([np.eye(3 * n), -np.eye(3 * n)])
    return PairExtension(i, j, XP, YP, vp, vn, M12, M22, lam, int(zero.sum()))


def assemble_Pi(XK, rho, Z11, Z12, Z22, f, q):
    """Quadratic-form matrix on ``(inputs, outputs)`` of the local closed loop.

    Inputs are ``(x^K, s^K, d)`` and outputs ``(x^K_next, o^K, z)``.  The
    ``Z`` blocks must be in the channel order of ``s^K``; ``Z12`` couples
    ``o^K`` (rows) with ``s^K`` (columns).

    Raises
    ------
    SingularPi
    """
    XK = np.asarray(XK, float)
    kk, nn = XK.shape[0], Z11.shape[0]
    m_in = kk + nn + f
    P_in = block_diag([-XK, Z22, -rho * np.eye(f)])
    P_out = block_diag([XK, Z11, np.eye(q)])
    cross = np.zeros((m_in, kk + nn + q))
    cross[kk:kk + nn, kk:kk + nn] = Z12.T
    P = np.block([[P_in, cross], [cross.T, P_out]])
    P = 0.5 * (P + P.T)
    s = np.linalg.svd(P, compute_uv=False)
    if s.size and s[-1] <= 1e-12 * s[0]:
        raise SingularPi(f"P is singular (cond={s[0] / max(s[-1], 1e-300):.3g})", stage="theta")
    return P


def _margin(M, sign):
    M = 0.5 * (M + M.T)
    if M.size == 0:
        return np.inf
    w = np.linalg.eigvalsh(M)
    return float(-w[-1]) if sign < 0 else float(w[0])


def elimination_margins(P, Ut, V, W):
    """Margins of the two projected conditions (positive means satisfied).

    The first is ``-lambda_max`` of the projection on ``ker V`` of
    ``[I; W]' P [I; W]``; the second ``lambda_min`` of the projection on
    ``ker U`` of ``[-W'; I]' P^-1 [-W'; I]``.
    """
    m_out, m_in = W.shape
    Vp = kernel_basis(V)
    H0 = np.vstack([np.eye(m_in), W]) @ Vp
    Up = kernel_basis(Ut.T)
    G2 = np.vstack([-W.T, np.eye(m_out)]) @ Up
    Pinv = np.linalg.inv(P)
    return _margin(H0.T @ P @ H0, -1), _margin(G2.T @ Pinv @ G2, +1)


def qmi_residual(P, Ut, V, W, theta):
    """``[I; W + U' Theta V]' P [I; W + U' Theta V]``."""
    G = W + Ut @ theta @ V
    H = np.vstack([np.eye(G.shape[1]), G])
    F = H.T @ P @ H
    return 0.5 * (F + F.T)


@dataclass
class QmiResult:
    theta: np.ndarray
    lam_max: float
    margin: float
    strategy: str
    precondition: tuple
    tau: float = float("nan")


def _range_basis(M, rtol=1e-10):
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return U[:, :r], s[:r], Vt[:r].T


def _constructive(P, Ut, V, W, taus):
    m_out, m_in = W.shape
    GW = np.vstack([np.eye(m_in), W])
    Vp = kernel_basis(V)
    Uv, sv, Vr = _range_basis(V)          # V = Uv diag(sv) Vr'
    Ur, su, Vu = _range_basis(Ut)         # Ut = Ur diag(su) Vu'
    rv, ru = Vr.shape[1], Ur.shape[1]
    G0 = GW @ Vp
    if G0.shape[1]:
        N = G0.T @ P @ G0
        Pt = P - P @ G0 @ np.linalg.solve(N, G0.T @ P)
    else:
        Pt = P
    Eb = GW @ Vr
    Ec = np.vstack([np.zeros((m_in, ru)), Ur])
    E = np.hstack([Eb, Ec])
    Mq = E.T @ Pt @ E
    Mq = 0.5 * (Mq + Mq.T)
    Q, S, R = Mq[:rv, :rv], Mq[:rv, rv:], Mq[rv:, rv:]
    r_lam, r_vec = np.linalg.eigh(R)
    r_tol = 1e-10 * max(np.max(np.abs(r_lam), initial=0.0), 1e-300)
    inv = np.where(np.abs(r_lam) > r_tol, 1.0 / np.where(r_lam == 0, 1, r_lam), 0.0)
    Rp = (r_vec * inv) @ r_vec.T
    K0 = -Rp @ S.T
    D = Q - S @ Rp @ S.T
    D = 0.5 * (D + D.T)
    d, Ed = np.linalg.eigh(D)
    negR = r_lam < -r_tol
    Vm, lm = r_vec[:, negR], -r_lam[negR]
    dscale = max(np.max(np.abs(d), initial=0.0), 1e-300)

    def theta_of(K):
        return Vu @ ((K / su[:, None]) / sv[None, :]) @ Uv.T if rv and ru else np.zeros((Ut.shape[1], V.shape[0]))

    qneg = Vm.shape[1]
    out = []
    if np.sum(d >= 0) > qneg:
        return [(float("nan"), theta_of(K0))]
    for t in taus:
        tau = t * dscale
        J = d > -tau
        if J.sum() > qneg:
            # cover the qneg largest directions and stay above the first uncovered one
            J = np.zeros(d.size, bool)
            J[np.argsort(d)[::-1][:qneg]] = True
            tau = min(tau, 0.5 * -np.max(d[~J]))
        C = np.zeros((qneg, rv))
        C[:J.sum()] = (np.sqrt(d[J] + tau)[:, None]) * Ed[:, J].T
        Om = C / np.sqrt(lm)[:, None]
        K = K0 + Vm @ Om
        out.append((tau, theta_of(K)))
    if not out:
        out.append((float("nan"), theta_of(K0)))
    return out


def _refine(P, Ut, V, W, theta0, maxiter=500):
    shape = theta0.shape
    m_in = W.shape[1]
    P21 = P[m_in:, :m_in]
    P22 = P[m_in:, m_in:]
    reg = 1e-8

    def fun(x):
        th = x.reshape(shape)
        F = qmi_residual(P, Ut, V, W, th)
        w, vec = np.linalg.eigh(F)
        v = vec[:, -1]
        G = W + Ut @ th @ V
        g = 2.0 * Ut.T @ np.outer((P21 + P22 @ G) @ v, V @ v)
        return w[-1] + reg * x @ x, g.ravel() + 2 * reg * x

    res = minimize(fun, theta0.ravel(), jac=True, method="BFGS",
                   options={"maxiter": maxiter, "gtol": 1e-12})
    return res.x.reshape(shape)


def solve_theta_qmi(P, Ut, V, W, rel=1e-8, taus=(1e-3, 1e-2, 1e-1, 0.3, 1.0, 3.0),
                    check_preconditions=True) -> QmiResult:
    """Find ``Theta`` with a negative definite :func:`qmi_residual`.

    The constructive route eliminates the kernel of ``V``, completes the
    square in the remaining free block and uses the negative eigenspace of
    its quadratic coefficient to push every nonnegative direction below
    ``-tau``.  If none of the ``taus`` succeed, the best candidate is refined
    by descent on ``lambda_max``.  Acceptance is decided on the residual.

    Raises
    ------
    EliminationPreconditionFailed
    ReconstructionFailed
    """
    m1, m2 = elimination_margins(P, Ut, V, W)
    if check_preconditions:
        scale = 1.0 + np.linalg.norm(P, 2) * (1 + np.linalg.norm(W, 2)) ** 2
        if m1 <= -1e-12 * scale:
            raise EliminationPreconditionFailed(
                f"projection on ker V is not negative definite (margin {m1:.3g})", "kernel_V", m1)
        if m2 <= -1e-12 * scale:
            raise EliminationPreconditionFailed(
                f"dual projection on ker U is not positive definite (margin {m2:.3g})",
                "kernel_U", m2)

    def score(th):
        F = qmi_residual(P, Ut, V, W, th)
        w = np.linalg.eigvalsh(F)
        thr = rel * (1.0 + np.max(np.abs(w)))
        return float(w[-1]), float(-w[-1] - thr), float(-w[-1] / (1.0 + np.max(np.abs(w))))

    best = None
    for tau, th in _constructive(P, Ut, V, W, taus):
        lam, marg, relm = score(th)
        if best is None or relm > best[0]:
            best = (relm, tau, th, lam, marg)
    relm, tau, th, lam, marg = best
    strategy = "constructive"
    if marg <= 0:
        th = _refine(P, Ut, V, W, th)
        lam, marg, relm = score(th)
        strategy = "refined"
    if marg <= 0:
        raise ReconstructionFailed(
            f"no controller with negative definite residual found (lambda_max={lam:.3g})",
            stage="theta")
    return QmiResult(th, lam, marg, strategy, (m1, m2), tau)
