"""Matrix Lie groups SO(3), SE(3), SE2(3) and the auxiliary maps used by the
observer and the controller.

Array helpers accept leading batch dimensions where noted; the dataclass
wrappers (``Pose``, ``ExtendedPose``, ``Twist``) are thin immutable views
over the homogeneous embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9
STRUCTURE_TOL = 1e-6

#: Gravity in the inertial frame, m/s^2.
GRAVITY = np.array([0.0, 0.0, -9.81])


class GeometryError(ValueError):
    """Raised on invalid arguments or matrices without group structure."""


# --------------------------------------------------------------------------
# Elementary maps
# --------------------------------------------------------------------------

def gamma(y) -> np.ndarray:
    """Skew matrix with ``gamma(y) @ x == cross(y, x)``. Batched over y[..., 3]."""
    y = np.asarray(y, dtype=float)
    out = np.zeros(y.shape[:-1] + (3, 3))
    out[..., 0, 1] = -y[..., 2]
    out[..., 0, 2] = y[..., 1]
    out[..., 1, 0] = y[..., 2]
    out[..., 1, 2] = -y[..., 0]
    out[..., 2, 0] = -y[..., 1]
    out[..., 2, 1] = y[..., 0]
    return out


def vee_rot(A) -> np.ndarray:
    """Inverse of :func:`gamma` on the skew part of ``A[..., 3, 3]``."""
    A = np.asarray(A, dtype=float)
    return 0.5 * np.stack(
        [
            A[..., 2, 1] - A[..., 1, 2],
            A[..., 0, 2] - A[..., 2, 0],
            A[..., 1, 0] - A[..., 0, 1],
        ],
        axis=-1,
    )


def vee_se3(X) -> np.ndarray:
    """6-vector ``(vee_rot(top-left block), translation / 2)`` of a 4x4 matrix."""
    X = np.asarray(X, dtype=float)
    return np.concatenate([vee_rot(X[..., :3, :3]), 0.5 * X[..., :3, 3]], axis=-1)


def skew(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return 0.5 * (A - np.swapaxes(A, -1, -2))


def sym(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def upsilon(B) -> np.ndarray:
    """Projection onto the Lie-algebra pattern: skew leading 3x3 block, keep the
    upper-right 3xk block, zero every row below the third.

    Works for any square size >= 4 and for stacks ``B[..., N, N]``.
    """
    B = np.asarray(B, dtype=float)
    if B.shape[-1] != B.shape[-2] or B.shape[-1] < 4:
        raise GeometryError(f"upsilon needs a square matrix of size >= 4, got {B.shape}")
    out = np.zeros_like(B)
    out[..., :3, :3] = skew(B[..., :3, :3])
    out[..., :3, 3:] = B[..., :3, 3:]
    return out


def frobenius_inner(A, B) -> float:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise GeometryError(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.sum(A * B))


def trace(A) -> float:
    return float(np.trace(np.asarray(A, dtype=float)))


def rodrigues(theta: float, axis) -> np.ndarray:
    """Rotation by ``theta`` about the unit vector ``axis``."""
    axis = np.asarray(axis, dtype=float)
    if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise GeometryError(f"rotation axis must be a unit 3-vector, got {axis}")
    K = gamma(axis)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def log_rot(R) -> np.ndarray:
    """Rotation vector of ``R`` (angle in [0, pi])."""
    R = np.asarray(R, dtype=float)
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    angle = np.arccos(c)
    w = vee_rot(R)
    s = np.sin(angle)
    if angle < 1e-7:
        return w * (1.0 + angle**2 / 6.0)
    if np.pi - angle > 1e-5:
        return w * (angle / s)
    # near pi: axis from the symmetric part, sign from the skew part
    B = 0.5 * (R + np.eye(3))
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(B[k, k])
    if axis @ w < 0.0:
        axis = -axis
    return angle * axis


def project_rot(R, tol: float = ORTHO_TOL) -> np.ndarray:
    """Nearest rotation (polar factor) when ``R`` has drifted off SO(3)."""
    R = np.asarray(R, dtype=float)
    if np.linalg.norm(R.T @ R - np.eye(3)) <= tol:
        return R
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def is_rotation(R, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.linalg.norm(R.T @ R - np.eye(3)) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


# --------------------------------------------------------------------------
# Homogeneous embeddings (array level)
# --------------------------------------------------------------------------

def psi(R, p) -> np.ndarray:
    X = np.eye(4)
    X[:3, :3] = R
    X[:3, 3] = p
    return X


def psi_bar(R, v, p) -> np.ndarray:
    X = np.eye(5)
    X[:3, :3] = R
    X[:3, 3] = v
    X[:3, 4] = p
    return X


def inv_se3(X) -> np.ndarray:
    """Closed-form inverse of ``X[..., 4, 4]`` in SE(3)."""
    X = np.asarray(X, dtype=float)
    Rt = np.swapaxes(X[..., :3, :3], -1, -2)
    out = np.zeros_like(X)
    out[..., :3, :3] = Rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", Rt, X[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


def inv_se23(X) -> np.ndarray:
    """Closed-form inverse of ``X[..., 5, 5]`` in SE2(3)."""
    X = np.asarray(X, dtype=float)
    Rt = np.swapaxes(X[..., :3, :3], -1, -2)
    out = np.zeros_like(X)
    out[..., :3, :3] = Rt
    out[..., :3, 3:] = -Rt @ X[..., :3, 3:]
    out[..., 3, 3] = 1.0
    out[..., 4, 4] = 1.0
    return out


def twist_matrix(ang, lin) -> np.ndarray:
    W = np.zeros(np.shape(ang)[:-1] + (4, 4))
    W[..., :3, :3] = gamma(ang)
    W[..., :3, 3] = lin
    return W


def adjoint_matrix(X, W) -> np.ndarray:
    """``X W X^-1`` for 4x4 ``X`` in SE(3) and ``W`` in se(3)."""
    return X @ W @ inv_se3(X)


def _check_structure(X, n: int, tol: float) -> None:
    X = np.asarray(X, dtype=float)
    if X.shape != (n, n):
        raise GeometryError(f"expected a {n}x{n} matrix, got {X.shape}")
    tail = X[3:, :]
    expected = np.zeros((n - 3, n))
    expected[:, 3:] = np.eye(n - 3)
    if np.max(np.abs(tail - expected)) > tol:
        raise GeometryError("lower rows do not match the group embedding")
    R = X[:3, :3]
    if np.linalg.norm(R.T @ R - np.eye(3)) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise GeometryError("leading block is not a rotation")


# --------------------------------------------------------------------------
# Value types
# --------------------------------------------------------------------------

def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Twist:
    """Body velocity pair; ``matrix()`` gives the se(3) element."""

    ang: np.ndarray
    lin: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ang", _frozen(self.ang))
        object.__setattr__(self, "lin", _frozen(self.lin))

    @classmethod
    def from_matrix(cls, W) -> "Twist":
        W = np.asarray(W, dtype=float)
        return cls(vee_rot(W[:3, :3]), W[:3, 3])

    @classmethod
    def from_vector(cls, z) -> "Twist":
        z = np.asarray(z, dtype=float)
        return cls(z[:3], z[3:6])

    def matrix(self) -> np.ndarray:
        return twist_matrix(self.ang, self.lin)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.ang, self.lin])


@dataclass(frozen=True)
class Pose:
    """Element of SE(3)."""

    rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    pos: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rot", _frozen(self.rot))
        object.__setattr__(self, "pos", _frozen(self.pos))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, X, tol: float = STRUCTURE_TOL) -> "Pose":
        _check_structure(X, 4, tol)
        X = np.asarray(X, dtype=float)
        return cls(X[:3, :3], X[:3, 3])

    def matrix(self) -> np.ndarray:
        return psi(self.rot, self.pos)

    def inverse(self) -> "Pose":
        Rt = self.rot.T
        return Pose(Rt, -Rt @ self.pos)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rot @ other.rot, self.rot @ other.pos + self.pos)

    def adjoint(self, W: Twist) -> Twist:
        return adjoint(self, W)


@dataclass(frozen=True)
class ExtendedPose:
    """Element of SE2(3): attitude, velocity and position."""

    rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pos: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rot", _frozen(self.rot))
        object.__setattr__(self, "vel", _frozen(self.vel))
        object.__setattr__(self, "pos", _frozen(self.pos))

    @classmethod
    def identity(cls) -> "ExtendedPose":
        return cls()

    @classmethod
    def from_matrix(cls, X, tol: float = STRUCTURE_TOL) -> "ExtendedPose":
        _check_structure(X, 5, tol)
        X = np.asarray(X, dtype=float)
        return cls(X[:3, :3], X[:3, 3], X[:3, 4])

    def matrix(self) -> np.ndarray:
        return psi_bar(self.rot, self.vel, self.pos)

    def inverse(self) -> "ExtendedPose":
        Rt = self.rot.T
        return ExtendedPose(Rt, -Rt @ self.vel, -Rt @ self.pos)

    def __matmul__(self, other: "ExtendedPose") -> "ExtendedPose":
        return ExtendedPose(
            self.rot @ other.rot,
            self.rot @ other.vel + self.vel,
            self.rot @ other.pos + self.pos,
        )

    def pose(self) -> Pose:
        return Pose(self.rot, self.pos)


@dataclass(frozen=True)
class NavInput:
    """IMU reading: body angular rate and specific force."""

    omega: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", _frozen(self.omega))
        object.__setattr__(self, "accel", _frozen(self.accel))
        if not (np.all(np.isfinite(self.omega)) and np.all(np.isfinite(self.accel))):
            raise GeometryError("non-finite IMU reading")

    def matrix(self) -> np.ndarray:
        """5x5 input matrix driving ``X' = X U + G X``."""
        return input_matrix(self.omega, self.accel)


def input_matrix(omega, accel) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    U = np.zeros(omega.shape[:-1] + (5, 5))
    U[..., :3, :3] = gamma(omega)
    U[..., :3, 3] = accel
    U[..., 3, 4] = 1.0
    return U


def gravity_matrix(g=GRAVITY) -> np.ndarray:
    G = np.zeros((5, 5))
    G[:3, 3] = g
    G[3, 4] = -1.0
    return G


def adjoint(X: Pose, W: Twist) -> Twist:
    """Ad_X W = X W X^-1, computed in closed form."""
    ang = X.rot @ W.ang
    lin = X.rot @ W.lin - np.cross(ang, X.pos)
    return Twist(ang, lin)
