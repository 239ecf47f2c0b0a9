"""Hybrid task-space tracking controller on SE(3).

The potential ``U(X, h) = 1/2 tr((I - X) Kc (I - X)^T)`` is indexed by a chart
``h = (theta_h, axis)`` from a finite grid; a hysteresis switch picks the
chart with the lowest potential. The torque law is computed torque in the
end-effector body frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from .geom import (
    Pose,
    Twist,
    adjoint,
    inv_se3,
    rodrigues,
    sym,
    vee_se3,
)
from .manipulator import (
    JointState,
    RobotModel,
    forward_kinematics,
    inertia_terms,
    inverse_kinematics,
    kinematics,
    nonlinear_terms,
)

AXES = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
DEFAULT_THETAS = (-np.pi / 10, -np.pi / 20, np.pi / 20, np.pi / 10)
THETA_MAX = np.pi / 10

EXACT_SIGMA = 1e-3
HARD_SIGMA = 1e-4
DLS_LAMBDA = 1e-2


class ControllerError(ValueError):
    pass


class SingularityError(ControllerError):
    pass


class ScenarioError(ControllerError):
    pass


@dataclass(frozen=True)
class SwitchState:
    theta: float
    axis: int  # index into AXES

    def __post_init__(self):
        if abs(self.theta) > THETA_MAX + 1e-12:
            raise ControllerError(f"|theta_h| must be <= pi/10, got {self.theta}")
        if self.axis not in (0, 1, 2):
            raise ControllerError(f"axis index must be 0, 1 or 2, got {self.axis}")

    def rotation(self) -> np.ndarray:
        return rodrigues(self.theta, np.array(AXES[self.axis]))


@dataclass(frozen=True)
class ControllerGains:
    kc: tuple = (300.0, 300.0, 300.0, 300.0)
    Kd: float = 5.0
    delta_c: float | None = None  # defaults to 0.05 * kc[0]
    thetas: tuple = DEFAULT_THETAS
    axes: tuple = (0, 1, 2)
    # "regularized": Kc = sym(kc (2I - X_h)), symmetric positive definite.
    # "literal": Kc = kc (I - X_h), which has no translational stiffness.
    mode: str = "regularized"

    def __post_init__(self):
        kc = tuple(float(k) for k in self.kc)
        if len(kc) != 4 or min(kc) < 0 or min(kc[:3]) <= 0:
            raise ControllerError("kc needs 4 non-negative entries, first three positive")
        if not self.Kd > 0:
            raise ControllerError("Kd must be positive")
        object.__setattr__(self, "kc", kc)
        if self.delta_c is None:
            object.__setattr__(self, "delta_c", 0.05 * kc[0])
        if not self.delta_c > 0:
            raise ControllerError("delta_c must be positive")
        if self.mode not in ("regularized", "literal"):
            raise ControllerError(f"unknown gain mode {self.mode!r}")
        if not self.thetas or any(abs(t) > THETA_MAX + 1e-12 for t in self.thetas):
            raise ControllerError("grid angles must satisfy |theta| <= pi/10")

    def grid(self) -> list[SwitchState]:
        return [SwitchState(float(t), a) for a in self.axes for t in self.thetas]


def gain_matrix(h: SwitchState, gains: ControllerGains) -> np.ndarray:
    return _gain_matrix(h, gains).copy()


@lru_cache(maxsize=256)
def _gain_matrix(h: SwitchState, gains: ControllerGains) -> np.ndarray:
    Xh = np.eye(4)
    Xh[:3, :3] = h.rotation()
    D = np.diag(gains.kc)
    if gains.mode == "literal":
        return D @ (np.eye(4) - Xh)
    return sym(D @ (2.0 * np.eye(4) - Xh))


def _mat(X) -> np.ndarray:
    return X.matrix() if isinstance(X, Pose) else np.asarray(X, dtype=float)


def potential(Xe, h: SwitchState, gains: ControllerGains) -> float:
    E = np.eye(4) - _mat(Xe)
    return 0.5 * float(np.trace(E @ _gain_matrix(h, gains) @ E.T))


@lru_cache(maxsize=32)
def _grid_gains(gains: ControllerGains) -> np.ndarray:
    return np.array([_gain_matrix(h, gains) for h in gains.grid()])


def grid_potentials(Xe, gains: ControllerGains) -> np.ndarray:
    """Potential for every chart of ``gains.grid()``."""
    E = np.eye(4) - _mat(Xe)
    return 0.5 * np.einsum("ij,gjk,ik->g", E, _grid_gains(gains), E)


def gradient_matrix(Xe, h: SwitchState, gains: ControllerGains) -> np.ndarray:
    """``Xe^-1 grad U`` as the 4x4 matrix ``(I - Xe^-1) Kc``."""
    return (np.eye(4) - inv_se3(_mat(Xe))) @ _gain_matrix(h, gains)


def potential_gradient(Xe, h: SwitchState, gains: ControllerGains) -> np.ndarray:
    return vee_se3(gradient_matrix(Xe, h, gains))


@dataclass(frozen=True)
class SwitchDecision:
    jump: bool
    gap: float
    state: SwitchState


def switch_update(Xe, h: SwitchState, gains: ControllerGains) -> SwitchDecision:
    grid = gains.grid()
    vals = grid_potentials(Xe, gains)
    k = int(np.argmin(vals))
    gap = potential(Xe, h, gains) - float(vals[k])
    if gap >= gains.delta_c:
        return SwitchDecision(True, gap, grid[k])
    return SwitchDecision(False, gap, h)


def best_chart(Xe, gains: ControllerGains) -> SwitchState:
    return gains.grid()[int(np.argmin(grid_potentials(Xe, gains)))]


# --------------------------------------------------------------------------
# Tracking error and torque
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrackingError:
    Xe: Pose
    Y: Twist


def tracking_error(X: Pose, W: Twist, Xd: Pose, Wd: Twist) -> TrackingError:
    Xe = Xd.inverse() @ X
    Wd_e = adjoint(Xe.inverse(), Wd)
    return TrackingError(Xe, Twist(W.ang - Wd_e.ang, W.lin - Wd_e.lin))


@dataclass(frozen=True)
class ControlOutput:
    tau: np.ndarray
    command: np.ndarray  # phi_bar(Xe^-1 grad U + Kd Y), the commanded -Zdot
    sigma_min: float
    mode: str  # "exact" | "damped" | "singular"

    @property
    def singular(self) -> bool:
        return self.mode == "singular"


def task_command(Xe, Y: Twist, h: SwitchState, gains: ControllerGains) -> np.ndarray:
    return vee_se3(gradient_matrix(Xe, h, gains) + gains.Kd * Y.matrix())


def solve_jacobian(J: np.ndarray, rhs: np.ndarray):
    """``J^-1 rhs`` with the damped fallback; returns (x, sigma_min, mode)."""
    s_min = float(np.linalg.svd(J, compute_uv=False)[-1])
    if s_min >= EXACT_SIGMA:
        return np.linalg.solve(J, rhs), s_min, "exact"
    if s_min < HARD_SIGMA:
        return np.zeros(J.shape[1]), s_min, "singular"
    x = J.T @ np.linalg.solve(J @ J.T + DLS_LAMBDA**2 * np.eye(J.shape[0]), rhs)
    return x, s_min, "damped"


def control_torque(model: RobotModel, js: JointState, Xe, Y: Twist, h: SwitchState,
                   gains: ControllerGains, strict: bool = False, kin=None) -> ControlOutput:
    """``tau = N - M J^-1 (Jdot qd + command)``.

    Below the hard singular-value floor the torque is zeroed and flagged, or
    ``SingularityError`` is raised when ``strict``. ``kin`` may pass a cached
    ``(T, J, Jdot)`` for this joint state.
    """
    _, J, Jd = kin if kin is not None else kinematics(model, js.q, js.qd)
    cmd = task_command(Xe, Y, h, gains)
    acc, s_min, mode = solve_jacobian(J, Jd @ js.qd + cmd)
    if mode == "singular":
        if strict:
            raise SingularityError(f"Jacobian sigma_min {s_min:.3e} below {HARD_SIGMA}")
        return ControlOutput(np.zeros(model.n), cmd, s_min, mode)
    M, dM, G = inertia_terms(model, js.q)
    tau = nonlinear_terms(model, js.q, js.qd, dM, G) - M @ acc
    return ControlOutput(tau, cmd, s_min, mode)


# --------------------------------------------------------------------------
# Reference trajectories
# --------------------------------------------------------------------------

def _smooth(u):
    """Quintic smoothstep and its integral on [0, 1]."""
    return 10 * u**3 - 15 * u**4 + 6 * u**5, 2.5 * u**4 - 3 * u**5 + u**6


@dataclass(frozen=True)
class Segment:
    t0: float
    duration: float
    start: Pose
    twist: Twist  # body frame, constant over the segment


@dataclass
class ReferenceTrajectory:
    """Piecewise constant-twist reference; optionally periodic.

    With ``blend > 0`` the world-frame velocity is blended over a window of
    that length centred on each segment boundary (translation-only
    references).
    """

    segments: list[Segment]
    periodic: bool = True
    blend: float = 0.0
    _period: float = field(init=False)

    def __post_init__(self):
        if not self.segments:
            raise ScenarioError("reference needs at least one segment")
        last = self.segments[-1]
        self._period = last.t0 + last.duration
        if self.blend > 0:
            if any(np.linalg.norm(s.twist.ang) > 0 for s in self.segments):
                raise ScenarioError("corner blending supports translation-only segments")
            if self.blend > min(s.duration for s in self.segments):
                raise ScenarioError("blend window longer than a segment")

    @property
    def period(self) -> float:
        return self._period

    def _locate(self, t: float):
        if self.periodic:
            t = t % self._period
        else:
            t = min(max(t, 0.0), self._period)
        for k, s in enumerate(self.segments):
            if t < s.t0 + s.duration or k == len(self.segments) - 1:
                return k, t - s.t0
        raise AssertionError

    def _exact(self, k: int, tau: float):
        s = self.segments[k]
        W = s.twist.matrix()
        if np.linalg.norm(s.twist.ang) == 0:
            E = np.eye(4)
            E[:3, 3] = s.twist.lin * tau
        else:
            E = scipy.linalg.expm(W * tau)
        return Pose.from_matrix(s.start.matrix() @ E), s.twist

    def world_velocity(self, k: int) -> np.ndarray:
        s = self.segments[k % len(self.segments)]
        return s.start.rot @ s.twist.lin

    def __call__(self, t: float) -> tuple[Pose, Twist]:
        """Desired pose and body twist at time ``t``."""
        k, tau = self._locate(t)
        if self.blend <= 0:
            return self._exact(k, tau)
        b = self.blend
        s = self.segments[k]
        nseg = len(self.segments)
        if tau < 0.5 * b and (self.periodic or k > 0):
            prev, nxt, u = (k - 1) % nseg, k, (tau + 0.5 * b) / b
            corner_t = 0.0
        elif tau > s.duration - 0.5 * b and (self.periodic or k < nseg - 1):
            prev, nxt, u = k, (k + 1) % nseg, (tau - s.duration + 0.5 * b) / b
            corner_t = s.duration
        else:
            return self._exact(k, tau)
        vp, vn = self.world_velocity(prev), self.world_velocity(nxt)
        # anchor at the corner point of segment k (start or end)
        corner = s.start.pos + self.world_velocity(k) * corner_t
        t_begin = corner_t - 0.5 * b  # blend start, relative to segment start
        p_begin = corner - vp * 0.5 * b
        S, IS = _smooth(u)
        pos = p_begin + vp * (tau - t_begin) + b * IS * (vn - vp)
        v = vp + S * (vn - vp)
        R = s.start.rot
        return Pose(R, pos), Twist(np.zeros(3), R.T @ v)

    def rate(self, t: float, eps: float = 1e-6) -> Twist:
        """Finite-difference time derivative of the body twist."""
        _, a = self(t - eps)
        _, b = self(t + eps)
        return Twist((b.ang - a.ang) / (2 * eps), (b.lin - a.lin) / (2 * eps))


def square_reference(start: Pose, side: float = 0.5, speed: float = 0.05,
                     directions=((0.0, 1.0, 0.0), (0.0, 0.0, 1.0)), blend: float = 0.0,
                     periodic: bool = True) -> ReferenceTrajectory:
    """Square with constant attitude traversed at constant speed.

    The path starts at the corner ``start.pos`` and runs along ``+d1, +d2,
    -d1, -d2`` (world-frame directions).
    """
    if not (side > 0 and speed > 0):
        raise ScenarioError("side and speed must be positive")
    d1, d2 = (np.asarray(d, dtype=float) for d in directions)
    if abs(np.linalg.norm(d1) - 1) > 1e-9 or abs(np.linalg.norm(d2) - 1) > 1e-9 or abs(d1 @ d2) > 1e-9:
        raise ScenarioError("square directions must be orthonormal")
    T = side / speed
    R = start.rot
    p = np.asarray(start.pos, dtype=float)
    segs = []
    for k, d in enumerate((d1, d2, -d1, -d2)):
        segs.append(Segment(k * T, T, Pose(R, p), Twist(np.zeros(3), R.T @ d * speed)))
        p = p + d * side
    return ReferenceTrajectory(segs, periodic=periodic, blend=blend)


def corners(ref: ReferenceTrajectory) -> np.ndarray:
    return np.array([s.start.pos for s in ref.segments])


def check_reachable(model: RobotModel, ref: ReferenceTrajectory, q0, samples: int = 40,
                    tol: float = 1e-6) -> np.ndarray:
    """Walk IK along the reference; raise ``ScenarioError`` if a sample cannot
    be reached. Returns the joint samples."""
    qs = []
    q = np.asarray(q0, dtype=float)
    for t in np.linspace(0.0, ref.period, samples, endpoint=False):
        Xd, _ = ref(t)
        q = inverse_kinematics(model, Xd, q)
        X = forward_kinematics(model, q)
        err = np.linalg.norm(X.pos - Xd.pos) + np.linalg.norm(X.rot - Xd.rot)
        if not err < tol:
            raise ScenarioError(f"reference point at t={t:.3f} is unreachable (residual {err:.2e})")
        qs.append(q.copy())
    return np.array(qs)
