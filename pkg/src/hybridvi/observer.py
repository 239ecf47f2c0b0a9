"""Hybrid visual-inertial observer on SE2(3).

Flow:  Xh' = Xh U + G Xh - Delta Xh,  Delta = -Upsilon((r - Xh b) r^T K)
Jump:  Xh+ = Rot(q theta, l) Xh when the landmark cost can be lowered by at
       least delta through one of the finite rotation offsets.

Array-level functions broadcast over leading batch dimensions of the
estimate so that many initialisations can be run together.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .geom import (
    GRAVITY,
    ExtendedPose,
    NavInput,
    gravity_matrix,
    input_matrix,
    inv_se23,
    rodrigues,
    upsilon,
)
from .sensors import LandmarkMeasurement, LandmarkSet, validate_landmarks

AXES = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]))


class ObserverInputError(ValueError):
    pass


@dataclass(frozen=True)
class ObserverGains:
    kv1: float = 9.0
    kv2: float = 25.0
    kp: float = 6.0
    gbar: float = float(np.linalg.norm(GRAVITY))
    delta: float = 0.8
    theta: float = np.pi / 2
    axes: tuple = AXES
    q_values: tuple = (1, 2, 3)

    def __post_init__(self):
        for name in ("kv1", "kv2", "kp", "gbar", "delta", "theta"):
            if not getattr(self, name) > 0:
                raise ObserverInputError(f"{name} must be positive")
        if not self.axes or not self.q_values:
            raise ObserverInputError("chart set must be non-empty")

    @classmethod
    def for_landmarks(cls, landmarks: LandmarkSet, delta_scale: float = 0.1, **kw):
        """Default hysteresis: ``delta_scale`` times the smallest non-structural
        eigenvalue of ``r r^T``."""
        rep = validate_landmarks(landmarks)
        return cls(delta=delta_scale * rep.reduced_min_eigenvalue, **kw)

    def gain_block(self) -> np.ndarray:
        """The 5x5 design matrix; the full gain is ``K = M @ gain_block()``."""
        Kc = np.zeros((5, 5))
        Kc[:3, :3] = self.gbar**2 * np.eye(3)
        Kc[3, 3] = self.kv1
        Kc[4, 3] = self.kv2
        Kc[4, 4] = self.kp
        return Kc

    def chart_rotations(self) -> np.ndarray:
        """Stack (m, 3, 3) of the rotation offsets; index i+1 is switch index i+1."""
        return np.array([rodrigues(qv * self.theta, ax) for ax in self.axes for qv in self.q_values])


@dataclass(frozen=True)
class ObserverState:
    est: ExtendedPose
    switch_index: int = 0
    jump_count: int = 0


@dataclass(frozen=True)
class ObserverError:
    """Right-invariant estimation error and its Lyapunov value."""

    tilde: ExtendedPose
    lyapunov: float


# --------------------------------------------------------------------------
# Array-level core
# --------------------------------------------------------------------------

class Landmarks:
    """Cached landmark matrices: r (5 x n), M = r r^T and K = M Kc."""

    def __init__(self, landmarks: LandmarkSet, gains: ObserverGains):
        self.set = landmarks
        self.r = landmarks.homogeneous
        self.M = self.r @ self.r.T
        self.K = self.M @ gains.gain_block()
        self.rK = self.r.T @ self.K  # n x 5


def cost_array(Xh, beta, r) -> np.ndarray:
    """sum_i ||r_i - Xh beta_i||^2, batched over Xh[..., 5, 5]."""
    res = r - Xh @ beta
    return np.sum(res * res, axis=(-2, -1))


def correction_array(Xh, beta, r, rK) -> np.ndarray:
    """Measurement form: -Upsilon((r - Xh b) r^T K)."""
    return -upsilon((r - Xh @ beta) @ rK)


def correction_from_error(Xt, M, K) -> np.ndarray:
    """Error form: Upsilon(Xt^-1 (I - Xt) M K); needs ground truth, test use."""
    Xti = inv_se23(Xt)
    return upsilon(Xti @ (np.eye(5) - Xt) @ M @ K)


def flow_rhs(Xh, U, G, beta, r, rK) -> np.ndarray:
    D = correction_array(Xh, beta, r, rK)
    return Xh @ U + G @ Xh - D @ Xh


def reproject(Xh) -> np.ndarray:
    """Polar-project the rotation block(s) when drifted off SO(3)."""
    R = Xh[..., :3, :3]
    dev = np.linalg.norm(np.swapaxes(R, -1, -2) @ R - np.eye(3), axis=(-2, -1))
    if np.all(dev <= 1e-9):
        return Xh
    U_, _, Vt = np.linalg.svd(R)
    det = np.linalg.det(U_ @ Vt)
    U_[..., :, 2] *= det[..., None]
    out = np.array(Xh, copy=True)
    out[..., :3, :3] = U_ @ Vt
    return out


def candidates_array(Xh, rotations) -> np.ndarray:
    """Left-multiply the estimate(s) by each rotation offset: shape (..., m, 5, 5)."""
    E = np.zeros((rotations.shape[0], 5, 5))
    E[:, :3, :3] = rotations
    E[:, 3, 3] = 1.0
    E[:, 4, 4] = 1.0
    return E @ Xh[..., None, :, :]


def jump_gap_array(Xh, beta, r, rotations):
    """(gap, argmin index 1..m, candidate costs) with gap = cost(Xh) - min candidate cost."""
    cands = candidates_array(Xh, rotations)
    cand_cost = cost_array(cands, beta[..., None, :, :] if beta.ndim > 2 else beta, r)
    best = np.argmin(cand_cost, axis=-1)
    gap = cost_array(Xh, beta, r) - np.min(cand_cost, axis=-1)
    return gap, best + 1, cand_cost


def lyapunov_array(Xt) -> np.ndarray:
    D = np.eye(Xt.shape[-1]) - Xt
    return 0.5 * np.sum(D * D, axis=(-2, -1))


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------

def _beta(measurements, landmarks: LandmarkSet) -> np.ndarray:
    beta = measurements.beta if isinstance(measurements, LandmarkMeasurement) else np.asarray(
        measurements, dtype=float)
    if beta.shape != (5, len(landmarks)):
        raise ObserverInputError(
            f"measurement count {beta.shape[-1]} does not match {len(landmarks)} landmarks")
    return beta


def cost(est: ExtendedPose, measurements, landmarks: LandmarkSet) -> float:
    beta = _beta(measurements, landmarks)
    return float(cost_array(est.matrix(), beta, landmarks.homogeneous))


def correction(est: ExtendedPose, measurements, landmarks: LandmarkSet,
               gains: ObserverGains) -> np.ndarray:
    beta = _beta(measurements, landmarks)
    L = Landmarks(landmarks, gains)
    return correction_array(est.matrix(), beta, L.r, L.rK)


def estimation_error(truth: ExtendedPose, est: ExtendedPose) -> ObserverError:
    Xt = truth.matrix() @ inv_se23(est.matrix())
    return ObserverError(ExtendedPose.from_matrix(Xt, tol=1e-6), float(lyapunov_array(Xt)))


NavSource = Union[NavInput, Callable[[float], NavInput]]
MeasSource = Union[LandmarkMeasurement, np.ndarray, Callable[[float], np.ndarray]]


def flow(state: ObserverState, nav_input: NavSource, measurements: MeasSource,
         landmarks: LandmarkSet, gains: ObserverGains, dt: float, t0: float = 0.0,
         substeps: int = 1, g=GRAVITY) -> ObserverState:
    """RK4 integration of the flow over ``dt``.

    ``nav_input`` and ``measurements`` may be constant or callables of time;
    callables are evaluated at the RK4 stage times.
    """
    if not dt > 0:
        raise ObserverInputError("dt must be positive")
    L = Landmarks(landmarks, gains)
    G = gravity_matrix(g)
    nav = nav_input if callable(nav_input) else (lambda t, _n=nav_input: _n)
    if callable(measurements):
        meas = measurements
    else:
        b0 = _beta(measurements, landmarks)
        meas = lambda t: b0

    def f(X, t):
        u = nav(t)
        beta = meas(t)
        beta = beta.beta if isinstance(beta, LandmarkMeasurement) else beta
        return flow_rhs(X, input_matrix(u.omega, u.accel), G, beta, L.r, L.rK)

    X = state.est.matrix()
    h = dt / substeps
    t = t0
    for _ in range(substeps):
        k1 = f(X, t)
        k2 = f(X + 0.5 * h * k1, t + 0.5 * h)
        k3 = f(X + 0.5 * h * k2, t + 0.5 * h)
        k4 = f(X + h * k3, t + h)
        X = X + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    X = reproject(X)
    if not np.all(np.isfinite(X)):
        from .hybrid import NumericalBlowup
        raise NumericalBlowup("observer state became non-finite")
    return ObserverState(ExtendedPose(X[:3, :3], X[:3, 3], X[:3, 4]),
                         state.switch_index, state.jump_count)


def build_chart_candidates(state: ObserverState, gains: ObserverGains) -> list[ExtendedPose]:
    cands = candidates_array(state.est.matrix(), gains.chart_rotations())
    return [ExtendedPose(C[:3, :3], C[:3, 3], C[:3, 4]) for C in cands]


@dataclass(frozen=True)
class JumpDecision:
    jump: bool
    gap: float
    state: ObserverState


def jump_check(state: ObserverState, measurements, landmarks: LandmarkSet,
               gains: ObserverGains) -> JumpDecision:
    beta = _beta(measurements, landmarks)
    Xh = state.est.matrix()
    gap, idx, _ = jump_gap_array(Xh, beta, landmarks.homogeneous, gains.chart_rotations())
    gap = float(gap)
    if gap >= gains.delta:
        C = candidates_array(Xh, gains.chart_rotations())[int(idx) - 1]
        new = ObserverState(ExtendedPose(C[:3, :3], C[:3, 3], C[:3, 4]),
                            int(idx), state.jump_count + 1)
        return JumpDecision(True, gap, new)
    return JumpDecision(False, gap, state)


def gain_condition_margin(Xt, M, gains: ObserverGains, g=GRAVITY) -> float:
    """lhs - rhs of the sufficient condition used for the flow decrease:

    lambda_min(M^2) (gbar^2 |I-R|^2 + kv1 |v|^2 + kv2 <v,p> + kp |p|^2)
        - (<(I-R) g, v> + <v, p>)
    """
    R, v, p = Xt[:3, :3], Xt[:3, 3], Xt[:3, 4]
    lam = float(np.min(np.linalg.eigvalsh(M @ M)))
    IR = np.eye(3) - R
    lhs = lam * (gains.gbar**2 * np.sum(IR * IR) + gains.kv1 * v @ v
                 + gains.kv2 * v @ p + gains.kp * p @ p)
    rhs = (IR @ g) @ v + v @ p
    return float(lhs - rhs)


def stiffness_substeps(landmarks: LandmarkSet, gains: ObserverGains, dt: float,
                       limit: float = 1.5) -> int:
    """RK4 substeps keeping ``dt_sub * lambda`` below ``limit`` for the fastest
    linearised correction mode."""
    L = Landmarks(landmarks, gains)
    lam = float(np.max(np.abs(np.linalg.eigvals(L.M @ L.K))))
    return max(1, int(np.ceil(dt * lam / limit)))
