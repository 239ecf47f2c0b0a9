"""Independent reference computations shared by unit and acceptance tests."""
import math

import numpy as np
import scipy.linalg
import scipy.special

from hybridvi import geom


def random_rotation(rng, max_angle=np.pi):
    ax = rng.normal(size=3)
    ax /= np.linalg.norm(ax)
    return geom.rodrigues(rng.uniform(0.0, max_angle), ax)


def random_pose(rng, scale=1.0):
    return geom.Pose(random_rotation(rng), rng.normal(size=3) * scale)


def random_extended(rng, scale=1.0):
    return geom.ExtendedPose(random_rotation(rng), rng.normal(size=3) * scale,
                             rng.normal(size=3) * scale)


def exp_series(A, terms=20):
    """Truncated exponential series."""
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


def algebra_se23(rng):
    """Random element of the SE2(3) Lie algebra (5x5)."""
    V = np.zeros((5, 5))
    V[:3, :3] = geom.gamma(rng.normal(size=3))
    V[:3, 3:] = rng.normal(size=(3, 2))
    return V


def ruhe_bounds(A, B):
    a = np.sort(np.linalg.eigvalsh(A))[::-1]
    b = np.sort(np.linalg.eigvalsh(B))[::-1]
    return float(a @ b[::-1]), float(a @ b)


def random_psd(rng, n):
    G = rng.normal(size=(n, n))
    # mix of full-rank and rank-deficient
    if rng.uniform() < 0.3:
        G[:, : rng.integers(1, n)] = 0.0
    return G @ G.T


def trace_derivative_fd(A, X, B, C, h=1e-6):
    """D[i, j] = d tr(A X B X^T C) / d X[j, i] by central differences."""
    f = lambda Y: np.trace(A @ Y @ B @ Y.T @ C)
    D = np.zeros((X.shape[1], X.shape[0]))
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            E = np.zeros_like(X)
            E[i, j] = h
            D[j, i] = (f(X + E) - f(X - E)) / (2 * h)
    return D


def group_directional_derivative(U, X, W, h=1e-6):
    """d/ds U(X expm(s W)) at s = 0, central differences."""
    return (U(X @ scipy.linalg.expm(h * W)) - U(X @ scipy.linalg.expm(-h * W))) / (2 * h)


def pendulum_period(L, theta0, g=9.81):
    """Exact period of a point pendulum released from rest at theta0."""
    k = math.sin(theta0 / 2)
    return 4 * math.sqrt(L / g) * scipy.special.ellipk(k * k)

