"""Rigid-body serial manipulator: kinematics, Euler-Lagrange dynamics and
forward dynamics.

Twists are body-frame, ordered (omega, v), matching ``X' = X W`` for the
end-effector pose X.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import kernels
from .geom import Pose, Twist

log = logging.getLogger(__name__)

COULOMB_EPS = 1e-3


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Link:
    alpha: float
    a: float
    d: float
    theta0: float
    mass: float
    com: tuple
    inertia: tuple  # ixx, iyy, izz, ixy, ixz, iyz (link frame, about the COM)
    viscous: float = 0.0
    coulomb: float = 0.0
    limits: tuple | None = None

    def inertia_matrix(self) -> np.ndarray:
        ixx, iyy, izz, ixy, ixz, iyz = self.inertia
        return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]], dtype=float)


@dataclass(frozen=True, eq=False)
class RobotModel:
    links: tuple
    tool: np.ndarray = field(default_factory=lambda: np.eye(4))
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    coulomb_eps: float = COULOMB_EPS
    name: str = "robot"

    def __post_init__(self):
        links = tuple(self.links)
        if not links:
            raise ModelError("model has no links")
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "tool", np.ascontiguousarray(self.tool, dtype=float))
        object.__setattr__(self, "gravity", np.ascontiguousarray(self.gravity, dtype=float))
        for i, L in enumerate(links):
            if not L.mass > 0:
                raise ModelError(f"link {i}: mass must be positive")
            if np.min(np.linalg.eigvalsh(L.inertia_matrix())) < -1e-12:
                raise ModelError(f"link {i}: inertia is not positive semidefinite")
        arr = lambda key: np.ascontiguousarray([getattr(L, key) for L in links], dtype=float)
        object.__setattr__(self, "_alpha", arr("alpha"))
        object.__setattr__(self, "_a", arr("a"))
        object.__setattr__(self, "_d", arr("d"))
        object.__setattr__(self, "_theta0", arr("theta0"))
        object.__setattr__(self, "_mass", arr("mass"))
        object.__setattr__(self, "_com", np.ascontiguousarray([L.com for L in links], dtype=float))
        object.__setattr__(self, "_inertia", np.ascontiguousarray(
            [L.inertia_matrix() for L in links]))
        object.__setattr__(self, "_viscous", arr("viscous"))
        object.__setattr__(self, "_coulomb", arr("coulomb"))

    @property
    def n(self) -> int:
        return len(self.links)

    # -- configuration file ------------------------------------------------

    @classmethod
    def from_dict(cls, cfg: dict) -> "RobotModel":
        links = []
        for i, L in enumerate(cfg["links"]):
            try:
                dh = L["dh"]
                fr = L.get("friction", {})
                links.append(Link(
                    alpha=float(dh["alpha"]), a=float(dh["a"]), d=float(dh["d"]),
                    theta0=float(dh.get("theta0", 0.0)),
                    mass=float(L["mass"]), com=tuple(map(float, L["com"])),
                    inertia=tuple(map(float, L["inertia"])),
                    viscous=float(fr.get("viscous", 0.0)), coulomb=float(fr.get("coulomb", 0.0)),
                    limits=tuple(L["limits"]) if L.get("limits") else None,
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise ModelError(f"link {i}: {exc}") from exc
        tool = np.eye(4)
        if "tool" in cfg:
            tool[:3, 3] = cfg["tool"].get("pos", [0.0, 0.0, 0.0])
            if "rot" in cfg["tool"]:
                tool[:3, :3] = np.asarray(cfg["tool"]["rot"], dtype=float)
        return cls(
            links=tuple(links), tool=tool,
            gravity=np.asarray(cfg.get("gravity", [0.0, 0.0, -9.81]), dtype=float),
            coulomb_eps=float(cfg.get("coulomb_eps", COULOMB_EPS)),
            name=cfg.get("name", "robot"),
        )

    @classmethod
    def load(cls, path) -> "RobotModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def check_limits(self, q) -> list[int]:
        """Indices of joints outside their configured limits (logged, not enforced)."""
        bad = [i for i, L in enumerate(self.links)
               if L.limits is not None and not (L.limits[0] <= q[i] <= L.limits[1])]
        if bad:
            log.warning("joint limits exceeded on joints %s", bad)
        return bad


def default_model_path() -> Path:
    return Path(__file__).parent / "data" / "robot6.json"


def load_default_model() -> RobotModel:
    return RobotModel.load(default_model_path())


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        qd = np.asarray(self.qd, dtype=float)
        if q.shape != qd.shape or not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ModelError("joint state must be finite with matching shapes")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)


@dataclass(frozen=True)
class EndEffectorState:
    pose: Pose
    twist: Twist


# --------------------------------------------------------------------------
# Kinematics
# --------------------------------------------------------------------------

def _c(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=float)


def kinematics(model: RobotModel, q, qd=None, backend=None):
    """``(T, J, Jdot)``: 4x4 pose, body Jacobian and its time derivative."""
    k = backend or kernels.backend
    q = _c(q)
    qd = np.zeros_like(q) if qd is None else _c(qd)
    return k.kinematics(model._alpha, model._a, model._d, model._theta0, model.tool, q, qd)


def forward_kinematics(model: RobotModel, q) -> Pose:
    T, _, _ = kinematics(model, q)
    return Pose(T[:3, :3], T[:3, 3])


def jacobian(model: RobotModel, q) -> np.ndarray:
    return kinematics(model, q)[1]


def jacobian_dot(model: RobotModel, q, qd) -> np.ndarray:
    return kinematics(model, q, qd)[2]


def end_effector_state(model: RobotModel, js: JointState) -> EndEffectorState:
    T, J, _ = kinematics(model, js.q)
    return EndEffectorState(Pose(T[:3, :3], T[:3, 3]), Twist.from_vector(J @ js.qd))


def link_frames(model: RobotModel, q):
    return kernels.link_frames(model._alpha, model._a, model._d, model._theta0, _c(q))


# --------------------------------------------------------------------------
# Dynamics
# --------------------------------------------------------------------------

def inertia_terms(model: RobotModel, q, backend=None):
    """``(M, dM, G)`` with ``dM[k] = dM/dq_k``."""
    k = backend or kernels.backend
    return k.dynamics(model._alpha, model._a, model._d, model._theta0, model._mass,
                      model._com, model._inertia, model.gravity, _c(q))


def christoffel(dM: np.ndarray, qd) -> np.ndarray:
    """Coriolis matrix from Christoffel symbols of the first kind."""
    # C_kj = sum_i 1/2 (dM_kj/dq_i + dM_ki/dq_j - dM_ij/dq_k) qd_i
    a = np.einsum("ikj,i->kj", dM, qd)
    b = np.einsum("jki,i->kj", dM, qd)
    c = np.einsum("kij,i->kj", dM, qd)
    return 0.5 * (a + b - c)


def coriolis_vector(dM: np.ndarray, qd) -> np.ndarray:
    """``C(q, qd) qd`` without forming C."""
    Md = np.einsum("ikj,i->kj", dM, qd)  # M_dot
    return Md @ qd - 0.5 * np.einsum("kij,i,j->k", dM, qd, qd)


def friction(model: RobotModel, qd) -> np.ndarray:
    qd = np.asarray(qd, dtype=float)
    return model._viscous * qd + model._coulomb * np.tanh(qd / model.coulomb_eps)


def dynamics_matrices(model: RobotModel, q, qd, backend=None):
    """``(M, C, G, F)`` of ``M qdd + C qd + G + F = tau``."""
    M, dM, G = inertia_terms(model, q, backend)
    return M, christoffel(dM, qd), G, friction(model, qd)


def mass_matrix_dot(model: RobotModel, q, qd) -> np.ndarray:
    _, dM, _ = inertia_terms(model, q)
    return np.einsum("ikj,i->kj", dM, np.asarray(qd, dtype=float))


def nonlinear_terms(model: RobotModel, q, qd, dM=None, G=None) -> np.ndarray:
    """N(q, qd) = C qd + G + F."""
    if dM is None or G is None:
        _, dM, G = inertia_terms(model, q)
    return coriolis_vector(dM, qd) + G + friction(model, qd)


def solve_pd(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        cf = scipy.linalg.cho_factor(M, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ModelError("inertia matrix is not positive definite") from exc
    return scipy.linalg.cho_solve(cf, rhs, check_finite=False)


def forward_dynamics(model: RobotModel, state: JointState, tau) -> np.ndarray:
    M, dM, G = inertia_terms(model, state.q)
    N = nonlinear_terms(model, state.q, state.qd, dM, G)
    return solve_pd(M, np.asarray(tau, dtype=float) - N)


def inverse_dynamics(model: RobotModel, state: JointState, qdd) -> np.ndarray:
    M, dM, G = inertia_terms(model, state.q)
    return M @ np.asarray(qdd, dtype=float) + nonlinear_terms(model, state.q, state.qd, dM, G)


def kinetic_energy(model: RobotModel, state: JointState) -> float:
    M, _, _ = inertia_terms(model, state.q)
    return 0.5 * float(state.qd @ M @ state.qd)


def potential_energy(model: RobotModel, q) -> float:
    Rs, os_ = link_frames(model, q)
    com_w = os_ + np.einsum("nij,nj->ni", Rs, model._com)
    return -float(np.sum(model._mass * (com_w @ model.gravity)))


def simulate(model: RobotModel, state: JointState, tau_fn, dt: float, steps: int):
    """RK4 joint-space simulation with torque held over each step.

    ``tau_fn(t, state) -> tau``. Returns arrays ``(t, q, qd)``.
    """
    q, qd = state.q.copy(), state.qd.copy()
    n = q.size
    ts = np.arange(steps + 1) * dt
    Q = np.empty((steps + 1, n))
    QD = np.empty((steps + 1, n))
    Q[0], QD[0] = q, qd

    def f(x, tau):
        qq, vv = x[:n], x[n:]
        return np.concatenate([vv, forward_dynamics(model, JointState(qq, vv), tau)])

    x = np.concatenate([q, qd])
    for k in range(steps):
        tau = tau_fn(ts[k], JointState(x[:n], x[n:]))
        k1 = f(x, tau)
        k2 = f(x + 0.5 * dt * k1, tau)
        k3 = f(x + 0.5 * dt * k2, tau)
        k4 = f(x + dt * k3, tau)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        Q[k + 1], QD[k + 1] = x[:n], x[n:]
    return ts, Q, QD


# --------------------------------------------------------------------------
# Scenario authoring helper
# --------------------------------------------------------------------------

def inverse_kinematics(model: RobotModel, target: Pose, q0, iters: int = 200,
                       tol: float = 1e-10, damping: float = 1e-3) -> np.ndarray:
    """Damped Gauss-Newton IK. Used only to place initial configurations;
    the controller itself never solves IK."""
    from .geom import log_rot

    q = np.array(q0, dtype=float)
    for _ in range(iters):
        T, J, _ = kinematics(model, q)
        R, p = T[:3, :3], T[:3, 3]
        err = np.concatenate([log_rot(R.T @ target.rot), R.T @ (target.pos - p)])
        if np.linalg.norm(err) < tol:
            break
        dq = J.T @ np.linalg.solve(J @ J.T + damping**2 * np.eye(6), err)
        q = q + dq
    return q
