"""Synthetic IMU and landmark measurements from ground-truth motion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import GRAVITY, ExtendedPose, NavInput, gamma, log_rot


class LandmarkError(ValueError):
    pass


class InsufficientLandmarks(LandmarkError):
    pass


class DegenerateGeometry(LandmarkError):
    pass


@dataclass(frozen=True)
class LandmarkSet:
    positions: np.ndarray  # (n, 3), inertial frame

    def __post_init__(self):
        p = np.array(self.positions, dtype=float).reshape(-1, 3)
        p.setflags(write=False)
        object.__setattr__(self, "positions", p)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def homogeneous(self) -> np.ndarray:
        """5 x n matrix whose columns are (p_i, 0, 1)."""
        r = np.zeros((5, len(self)))
        r[:3] = self.positions.T
        r[4] = 1.0
        return r

    @property
    def gram(self) -> np.ndarray:
        r = self.homogeneous
        return r @ r.T

    @classmethod
    def cube(cls, side: float = 2.0, center=(0.0, 0.0, 0.0)) -> "LandmarkSet":
        h = side / 2.0
        corners = [(x, y, z) for x in (-h, h) for y in (-h, h) for z in (-h, h)]
        return cls(np.asarray(corners) + np.asarray(center, dtype=float))


@dataclass(frozen=True)
class LandmarkReport:
    n: int
    singular_values: np.ndarray  # of the centred positions
    gram_eigenvalues: np.ndarray  # of M = r r^T, descending
    reduced_min_eigenvalue: float  # smallest eigenvalue with the zero velocity row removed


def validate_landmarks(landmarks: LandmarkSet, tol: float = 1e-6) -> LandmarkReport:
    """Check there are at least three non-collinear landmarks.

    ``M = r r^T`` always has a zero eigenvalue because every r_i has a zero
    in its fourth slot; the report therefore also gives the smallest
    eigenvalue of ``M`` with that row and column removed, which is what
    scales the observer hysteresis.
    """
    n = len(landmarks)
    if n < 3:
        raise InsufficientLandmarks(f"need at least 3 landmarks, got {n}")
    P = landmarks.positions
    sv = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)
    if sv.size < 2 or sv[1] <= tol:
        raise DegenerateGeometry(f"landmarks are collinear (singular values {sv})")
    M = landmarks.gram
    eig = np.sort(np.linalg.eigvalsh(M))[::-1]
    keep = [0, 1, 2, 4]
    reduced = np.linalg.eigvalsh(M[np.ix_(keep, keep)])
    return LandmarkReport(n, sv, eig, float(reduced[0]))


@dataclass(frozen=True)
class LandmarkMeasurement:
    """Landmark positions in the body frame: beta_i = X^-1 r_i."""

    beta: np.ndarray  # 5 x n
    t: float = 0.0

    @property
    def body_positions(self) -> np.ndarray:
        return self.beta[:3].T


def measure_landmarks(truth: ExtendedPose, landmarks: LandmarkSet, noise: float = 0.0,
                      rng: np.random.Generator | None = None, t: float = 0.0
                      ) -> LandmarkMeasurement:
    beta = measure_beta(truth.rot, truth.pos, landmarks.positions)
    if noise > 0.0:
        rng = rng if rng is not None else np.random.default_rng()
        beta[:3] += rng.normal(0.0, noise, size=beta[:3].shape)
    return LandmarkMeasurement(beta, t)


def measure_beta(R, p, positions) -> np.ndarray:
    """Noise-free 5 x n measurement matrix for attitude R and position p."""
    n = positions.shape[0]
    beta = np.zeros((5, n))
    beta[:3] = R.T @ (positions - p).T
    beta[4] = 1.0
    return beta


@dataclass(frozen=True)
class ImuSample:
    omega: np.ndarray
    accel: np.ndarray
    t: float = 0.0

    def nav_input(self) -> NavInput:
        return NavInput(self.omega, self.accel)


def imu_from_state(R, omega_body, world_accel, g=GRAVITY) -> tuple[np.ndarray, np.ndarray]:
    """Exact IMU reading for known body rate and inertial acceleration."""
    return np.asarray(omega_body, dtype=float), R.T @ (np.asarray(world_accel) - g)


def synthesize_imu(rots, vels, dt: float, g=GRAVITY, t0: float = 0.0) -> list[ImuSample]:
    """IMU samples from a uniformly sampled truth trajectory.

    Angular rate uses the central rotation difference through the matrix
    logarithm (exact for piecewise constant rates); the specific force uses
    the central difference of the inertial velocity. End samples use
    one-sided differences.
    """
    rots = np.asarray(rots, dtype=float)
    vels = np.asarray(vels, dtype=float)
    n = rots.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    out = []
    for k in range(n):
        lo, hi = max(k - 1, 0), min(k + 1, n - 1)
        span = (hi - lo) * dt
        Rrel = rots[lo].T @ rots[hi]
        w_half = log_rot(Rrel) / span
        # the log is taken around R_lo; carry it to R_k
        omega = rots[k].T @ rots[lo] @ w_half if k != lo else w_half
        vdot = (vels[hi] - vels[lo]) / span
        out.append(ImuSample(omega, rots[k].T @ (vdot - g), t0 + k * dt))
    return out


def integrate_imu(x0: ExtendedPose, samples: list[ImuSample], dt: float, g=GRAVITY
                  ) -> list[ExtendedPose]:
    """Re-integrate the navigation kinematics from sampled IMU data.

    RK4 with inputs linearly interpolated between samples.
    """
    R, v, p = np.array(x0.rot), np.array(x0.vel), np.array(x0.pos)
    out = [ExtendedPose(R, v, p)]

    def f(state, w, a):
        R_, v_, p_ = state
        return R_ @ gamma(w), R_ @ a + g, v_

    for k in range(len(samples) - 1):
        w0, a0 = samples[k].omega, samples[k].accel
        w1, a1 = samples[k + 1].omega, samples[k + 1].accel
        wm, am = 0.5 * (w0 + w1), 0.5 * (a0 + a1)
        s = (R, v, p)
        k1 = f(s, w0, a0)
        s2 = tuple(x + 0.5 * dt * d for x, d in zip(s, k1))
        k2 = f(s2, wm, am)
        s3 = tuple(x + 0.5 * dt * d for x, d in zip(s, k2))
        k3 = f(s3, wm, am)
        s4 = tuple(x + dt * d for x, d in zip(s, k3))
        k4 = f(s4, w1, a1)
        R, v, p = (x + dt / 6.0 * (a + 2 * b + 2 * c + d)
                   for x, a, b, c, d in zip(s, k1, k2, k3, k4))
        U, _, Vt = np.linalg.svd(R)
        R = U @ Vt
        out.append(ExtendedPose(R, v, p))
    return out

