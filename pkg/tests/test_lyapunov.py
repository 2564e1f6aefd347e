import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from disth2.errors import Unstable
from disth2.lyapunov import solve_discrete_lyapunov, spectral_radius


def _stable(rng, n, radius):
    A = rng.standard_normal((n, n))
    return radius * A / max(spectral_radius(A), 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.floats(0.0, 0.99), st.integers(0, 2 ** 32 - 1))
def test_matches_scipy(n, radius, seed):
    rng = np.random.default_rng(seed)
    A = _stable(rng, n, radius)
    G = rng.standard_normal((n, n))
    Q = G @ G.T
    X = solve_discrete_lyapunov(A, Q)
    ref = sla.solve_discrete_lyapunov(A.T, Q)
    assert np.allclose(X, ref, rtol=1e-7, atol=1e-9 * np.linalg.norm(ref))
    assert np.allclose(A.T @ X @ A - X + Q, 0, atol=1e-8 * (1 + np.linalg.norm(X)))


def test_scalar_closed_form():
    X = solve_discrete_lyapunov(np.array([[0.5]]), np.array([[3.0]]))
    assert X[0, 0] == pytest.approx(3.0 / 0.75)


def test_unstable_rejected():
    with pytest.raises(Unstable):
        solve_discrete_lyapunov(np.diag([0.5, 1.0]), np.eye(2))


def test_spectral_radius_of_rotation():
    t = 0.3
    R = 0.9 * np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    assert spectral_radius(R) == pytest.approx(0.9)
