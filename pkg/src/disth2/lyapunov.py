"""Dense discrete-time Lyapunov solver.

Solves ``A' X A - X + Q = 0`` by complex Schur reduction and column-wise
back-substitution.  The routine is small enough to own, and keeping it here
gives the verified path a residual check independent of the SDP layer.
"""

import numpy as np
import scipy.linalg as sla

from .errors import Unstable

__all__ = ["solve_discrete_lyapunov", "spectral_radius"]


def spectral_radius(A):
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def solve_discrete_lyapunov(A, Q, check=True, rtol=1e-10):
    """Return ``X`` with ``A.T @ X @ A - X + Q = 0``.

    Parameters
    ----------
    A : (n, n) array
        Must be Schur stable.
    Q : (n, n) symmetric array
    check : bool
        Verify the residual against ``rtol`` times the problem scale.

    Raises
    ------
    Unstable
        If the spectral radius of ``A`` is not below one.
    """
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise Unstable(f"spectral radius {rho:.6g} >= 1")

    # A' X A - X = -Q with A = U T U^H  ->  T^H Y T - Y = -F, F = U^H Q U
    T, U = sla.schur(A.astype(complex), output="complex")
    F = U.conj().T @ Q @ U
    Th = T.conj().T
    Y = np.zeros((n, n), dtype=complex)
    eye = np.eye(n)
    for j in range(n):
        rhs = -F[:, j]
        if j:
            rhs = rhs - Th @ (Y[:, :j] @ T[:j, j])
        # T^H is lower triangular
        Y[:, j] = sla.solve_triangular(T[j, j] * Th - eye, rhs, lower=True)
    X = (U @ Y @ U.conj().T).real
    X = 0.5 * (X + X.T)
    if check:
        res = A.T @ X @ A - X + Q
        scale = 1.0 + np.linalg.norm(Q) + np.linalg.norm(X)
        if np.linalg.norm(res) > rtol * scale * max(1.0, 1.0 / (1.0 - rho)):
            raise ArithmeticError("Lyapunov residual too large")
    return X
