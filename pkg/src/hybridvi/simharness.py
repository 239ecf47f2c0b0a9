"""Closed-loop simulation: manipulator plant, synthetic sensors, hybrid
observer and hybrid controller on one shared clock.

The navigation frame has the base-frame orientation and its origin at the
landmark centroid. Keeping the landmarks centred keeps the observer
correction well conditioned; positions in scenario files are base-frame
and converted on load.
"""
from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import controller as ctl
from . import observer as obs
from .geom import Pose, Twist, inv_se23, psi_bar, rodrigues
from .hybrid import (
    Executor,
    HybridError,
    HybridSystem,
    HybridTime,
    flow_intervals,
    monitor_flow,
    monitor_jump,
)
from .manipulator import (
    JointState,
    ModelError,
    RobotModel,
    default_model_path,
    inertia_terms,
    inverse_kinematics,
    kinematics,
    nonlinear_terms,
    solve_pd,
)
from .sensors import LandmarkError, LandmarkSet, validate_landmarks

log = logging.getLogger(__name__)

EVENT_INIT, EVENT_FLOW, EVENT_OBS, EVENT_CTRL = 0, 1, 2, 3
EVENT_NAMES = {EVENT_INIT: "init", EVENT_FLOW: "flow", EVENT_OBS: "obs", EVENT_CTRL: "ctrl"}


class ValidationError(ValueError):
    pass


class SimulationError(RuntimeError):
    """Numerical failure during a run, with the hybrid time attached."""

    def __init__(self, msg, step=None, time=None):
        super().__init__(f"{msg} (step {step}, hybrid time {time})")
        self.step = step
        self.time = time


def default_scenario_path() -> Path:
    return Path(__file__).parent / "data" / "scenario_square.json"


# --------------------------------------------------------------------------
# Scenario
# --------------------------------------------------------------------------

def _rot(cfg) -> np.ndarray:
    """Rotation from a 3x3 list or ``{"angle": rad, "axis": [..]}``."""
    if cfg is None:
        return np.eye(3)
    if isinstance(cfg, dict):
        ax = np.asarray(cfg["axis"], dtype=float)
        return rodrigues(float(cfg["angle"]), ax / np.linalg.norm(ax))
    R = np.asarray(cfg, dtype=float)
    if R.shape != (3, 3) or np.linalg.norm(R.T @ R - np.eye(3)) > 1e-6 or np.linalg.det(R) < 0:
        raise ValidationError("rotation must be a proper 3x3 rotation matrix")
    return R


@dataclass
class Scenario:
    model: RobotModel
    landmarks: LandmarkSet  # base frame
    q0: np.ndarray
    qd0: np.ndarray
    obs_p0: np.ndarray  # base frame
    obs_R0: np.ndarray
    obs_v0: np.ndarray
    obs_gains: obs.ObserverGains
    ctrl_gains: ctl.ControllerGains
    reference: ctl.ReferenceTrajectory
    dt: float = 1e-3
    duration: float = 60.0
    landmark_noise: float = 0.0
    seed: int = 0
    feedback: str = "estimate"
    substeps: int | None = None
    # test fixture: -1 flips the sign of the task-space command
    command_sign: float = 1.0
    raw: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if not self.duration >= 0 or (0 < self.duration < self.dt):
            raise ValidationError("duration must be zero or at least dt")
        if self.feedback not in ("estimate", "truth"):
            raise ValidationError(f"feedback must be 'estimate' or 'truth', got {self.feedback!r}")
        if self.landmark_noise < 0:
            raise ValidationError("noise must be non-negative")
        n = self.model.n
        self.q0 = np.asarray(self.q0, dtype=float)
        self.qd0 = np.zeros(n) if self.qd0 is None else np.asarray(self.qd0, dtype=float)
        if self.q0.shape != (n,) or self.qd0.shape != (n,):
            raise ValidationError(f"initial joint state must have {n} entries")
        if self.model.n != 6:
            raise ValidationError("the task-space controller needs a 6-joint arm")

    @property
    def nav_origin(self) -> np.ndarray:
        return self.landmarks.positions.mean(axis=0)

    @property
    def steps(self) -> int:
        return int(np.floor(self.duration / self.dt + 1e-9))

    def nav_landmarks(self) -> LandmarkSet:
        return LandmarkSet(self.landmarks.positions - self.nav_origin)

    def with_(self, **kw) -> "Scenario":
        return replace(self, **kw)


def scenario_from_dict(cfg: dict, base_dir: Path | None = None) -> Scenario:
    """Build and validate a scenario from its JSON form."""
    try:
        robot = cfg.get("robot", "default")
        if robot == "default":
            model = RobotModel.load(default_model_path())
        elif isinstance(robot, dict):
            model = RobotModel.from_dict(robot)
        else:
            path = Path(robot)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            model = RobotModel.load(path)

        lm = cfg["landmarks"]
        if "cube" in lm:
            landmarks = LandmarkSet.cube(float(lm["cube"].get("side", 2.0)), lm["cube"]["center"])
        else:
            landmarks = LandmarkSet(np.asarray(lm["positions"], dtype=float))
        validate_landmarks(landmarks)

        ini = cfg["initial"]
        if "q" in ini:
            q0 = np.asarray(ini["q"], dtype=float)
        else:
            target = Pose(_rot(ini["pose"].get("rot")), np.asarray(ini["pose"]["pos"], dtype=float))
            q0 = inverse_kinematics(model, target, np.asarray(ini.get("q_guess", np.zeros(model.n))))
        qd0 = ini.get("qd")

        oc = cfg.get("observer", {})
        gk = dict(oc.get("gains", {}))
        delta = gk.pop("delta", None)
        if "q_values" in gk:
            gk["q_values"] = tuple(gk["q_values"])
        if "axes" in gk:
            gk["axes"] = tuple(np.asarray(a, dtype=float) for a in gk["axes"])
        nav_lm = LandmarkSet(landmarks.positions - landmarks.positions.mean(axis=0))
        if delta is None:
            og = obs.ObserverGains.for_landmarks(nav_lm, **gk)
        else:
            og = obs.ObserverGains(delta=float(delta), **gk)

        cc = cfg.get("controller", {})
        cg = ctl.ControllerGains(
            kc=tuple(cc.get("kc", (300.0,) * 4)), Kd=float(cc.get("Kd", 5.0)),
            delta_c=cc.get("delta_c"), mode=cc.get("mode", "regularized"),
            thetas=tuple(cc.get("thetas", ctl.DEFAULT_THETAS)),
        )

        rc = cfg["reference"]
        if rc.get("type", "square") != "square":
            raise ValidationError(f"unknown reference type {rc.get('type')!r}")
        start = Pose(_rot(rc.get("attitude")), np.asarray(rc["start"], dtype=float))
        ref = ctl.square_reference(
            start, side=float(rc.get("side", 0.5)), speed=float(rc.get("speed", 0.05)),
            directions=rc.get("directions", ((0.0, 1.0, 0.0), (0.0, 0.0, 1.0))),
            blend=float(rc.get("blend", 0.0)), periodic=bool(rc.get("periodic", True)),
        )

        noise = cfg.get("noise", {})
        return Scenario(
            model=model, landmarks=landmarks, q0=q0, qd0=qd0,
            obs_p0=np.asarray(oc.get("p0", [0.0, 0.0, 0.0]), dtype=float),
            obs_R0=_rot(oc.get("R0")),
            obs_v0=np.asarray(oc.get("v0", [0.0, 0.0, 0.0]), dtype=float),
            obs_gains=og, ctrl_gains=cg, reference=ref,
            dt=float(cfg.get("dt", 1e-3)), duration=float(cfg.get("duration", 60.0)),
            landmark_noise=float(noise.get("landmark_std", 0.0)),
            seed=int(cfg.get("seed", 0)), feedback=cfg.get("feedback", "estimate"),
            substeps=oc.get("substeps"), command_sign=float(cc.get("command_sign", 1.0)),
            raw=cfg,
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed scenario: {exc!r}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read robot model: {exc}") from exc
    except (ModelError, LandmarkError, obs.ObserverInputError, ctl.ControllerError) as exc:
        raise ValidationError(str(exc)) from exc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read scenario {path}: {exc}") from exc
    return scenario_from_dict(cfg, path.parent)


def validate(scn: Scenario, reach_samples: int = 40) -> None:
    """Deeper checks than construction: reference reachability along the
    path and initial joint limits."""
    ctl.check_reachable(scn.model, scn.reference, scn.q0, samples=reach_samples)
    scn.model.check_limits(scn.q0)


# --------------------------------------------------------------------------
# Trajectory log
# --------------------------------------------------------------------------

def _names(prefix, n):
    return [f"{prefix}{i}" for i in range(1, n + 1)]


def _mat_names(prefix):
    return [f"{prefix}{i}{j}" for i in range(1, 4) for j in range(1, 4)]


COLUMNS = (
    ["t", "j", "j_obs", "j_ctrl", "event"]
    + _names("q", 6) + _names("qd", 6)
    + _mat_names("R_") + _names("v_", 3) + _names("p_", 3)  # truth, nav frame
    + _mat_names("Rh_") + _names("vh_", 3) + _names("ph_", 3)  # estimate, nav frame
    + _mat_names("Rt_") + _names("vt_", 3) + _names("pt_", 3)  # X X^-1_hat
    + ["obs_index", "h_theta", "h_axis"]
    + _names("ee_", 3) + _names("eeh_", 3)  # truth / estimated EE position, base frame
    + _mat_names("Rd_") + _names("pd_", 3)  # desired, base frame
    + _mat_names("Re_") + _names("pe_", 3)  # Xe
    + _names("Y", 6) + _names("Z", 6) + _names("cmd", 6)
    + ["U", "V_o", "V", "E", "gap_obs", "gap_ctrl"]
    + _names("tau", 6) + ["sigma_min", "singular"]
)
COL = {name: i for i, name in enumerate(COLUMNS)}


def cols(prefix: str, n: int) -> list[int]:
    return [COL[f"{prefix}{i}"] for i in range(1, n + 1)]


def mat_cols(prefix: str) -> list[int]:
    return [COL[n] for n in _mat_names(prefix)]


@dataclass
class HybridTrajectory:
    data: np.ndarray  # (rows, len(COLUMNS))
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, COL[name]]

    def block(self, prefix: str, n: int) -> np.ndarray:
        return self.data[:, cols(prefix, n)]

    def rotations(self, prefix: str) -> np.ndarray:
        return self.data[:, mat_cols(prefix)].reshape(-1, 3, 3)

    def error_matrices(self) -> np.ndarray:
        """Logged right-invariant estimation errors as (rows, 5, 5)."""
        X = np.tile(np.eye(5), (len(self), 1, 1))
        X[:, :3, :3] = self.rotations("Rt_")
        X[:, :3, 3] = self.block("vt_", 3)
        X[:, :3, 4] = self.block("pt_", 3)
        return X

    @property
    def jumps(self) -> np.ndarray:
        return np.flatnonzero(self["event"] >= EVENT_OBS)


def export_csv(traj: HybridTrajectory, path) -> None:
    """Header plus one row per record, 17 significant digits."""
    with open(path, "w") as fh:
        fh.write(",".join(COLUMNS) + "\n")
        if len(traj):
            np.savetxt(fh, traj.data, fmt="%.17g", delimiter=",")


def load_csv(path) -> HybridTrajectory:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != COLUMNS:
            raise ValidationError(f"{path}: unexpected column layout")
        body = fh.read()
    data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2) if body.strip() else np.empty((0, 0))
    return HybridTrajectory(data.reshape(-1, len(COLUMNS)))


# --------------------------------------------------------------------------
# Closed loop
# --------------------------------------------------------------------------

N_Q = 6
SL_Q = slice(0, 6)
SL_QD = slice(6, 12)
SL_X = slice(12, 37)
I_OBS, I_H = 37, 38
STATE_SIZE = 39


class ClosedLoop:
    """Stacked hybrid system ``x = (q, qd, Xh, obs_index, chart_index)``.

    The torque is held over each step; IMU readings at every RK4 stage come
    from the plant state and its acceleration under that torque, so plant
    and observer see the same motion.
    """

    def __init__(self, scn: Scenario):
        self.scn = scn
        self.model = scn.model
        self.g = np.asarray(scn.model.gravity, dtype=float)
        self.origin = scn.nav_origin
        self.nav_lm = scn.nav_landmarks()
        self.L = obs.Landmarks(self.nav_lm, scn.obs_gains)
        self.G5 = obs.gravity_matrix(self.g)
        self.chart_rots = scn.obs_gains.chart_rotations()
        self.grid = scn.ctrl_gains.grid()
        self._gap_key = None
        self._gap_val = None
        self.substeps = scn.substeps or obs.stiffness_substeps(self.nav_lm, scn.obs_gains, scn.dt)
        self.system = HybridSystem(
            flow_map=self.flow_map, jump_map=self.jump_map,
            in_flow_set=lambda x, u: True, in_jump_set=self.in_jump_set,
            project=self.project, substeps=self.substeps,
        )

    # -- pieces ------------------------------------------------------------

    def plant(self, q, qd, tau):
        """Kinematics plus joint acceleration: ``(T, J, Jd, qdd)``."""
        T, J, Jd = kinematics(self.model, q, qd)
        M, dM, G = inertia_terms(self.model, q)
        qdd = solve_pd(M, tau - nonlinear_terms(self.model, q, qd, dM, G))
        return T, J, Jd, qdd

    def truth(self, T, J, qd) -> np.ndarray:
        R = T[:3, :3]
        return psi_bar(R, R @ (J[3:] @ qd), T[:3, 3] - self.origin)

    def beta(self, T, noise) -> np.ndarray:
        R, p = T[:3, :3], T[:3, 3] - self.origin
        b = np.zeros((5, len(self.nav_lm)))
        b[:3] = R.T @ (self.nav_lm.positions - p).T
        b[4] = 1.0
        if noise is not None:
            b[:3] += noise
        return b

    def flow_map(self, x, u):
        tau, noise = u["tau"], u["noise"]
        q, qd = x[SL_Q], x[SL_QD]
        Xh = x[SL_X].reshape(5, 5)
        T, J, Jd, qdd = self.plant(q, qd, tau)
        tw = J @ qd
        w, vb = tw[:3], tw[3:]
        vbd = (J @ qdd + Jd @ qd)[3:]
        acc = _cross(w, vb) + vbd - T[:3, :3].T @ self.g
        U = obs.input_matrix(w, acc)
        dX = obs.flow_rhs(Xh, U, self.G5, self.beta(T, noise), self.L.r, self.L.rK)
        dx = np.zeros(STATE_SIZE)
        dx[SL_Q] = qd
        dx[SL_QD] = qdd
        dx[SL_X] = dX.ravel()
        return dx

    def project(self, x):
        x = x.copy()
        x[SL_X] = obs.reproject(x[SL_X].reshape(5, 5)).ravel()
        return x

    def obs_gap(self, x, u):
        T, _, _ = kinematics(self.model, x[SL_Q])
        gap, idx, _ = obs.jump_gap_array(x[SL_X].reshape(5, 5), self.beta(T, u["noise"]),
                                         self.L.r, self.chart_rots)
        return float(gap), int(idx)

    def feedback_pose(self, x, T) -> Pose:
        if self.scn.feedback == "truth":
            return Pose(T[:3, :3], T[:3, 3])
        Xh = x[SL_X].reshape(5, 5)
        return Pose(Xh[:3, :3], Xh[:3, 4] + self.origin)

    def tracking(self, x, t, T, J):
        Xd, Wd = self.scn.reference(t)
        W = Twist.from_vector(J @ x[SL_QD])
        err = ctl.tracking_error(self.feedback_pose(x, T), W, Xd, Wd)
        return Xd, W, err

    def ctrl_gap(self, x, t):
        T, J, _ = kinematics(self.model, x[SL_Q], x[SL_QD])
        _, _, err = self.tracking(x, t, T, J)
        vals = ctl.grid_potentials(err.Xe.matrix(), self.scn.ctrl_gains)
        k = int(np.argmin(vals))
        return float(vals[int(x[I_H])] - vals[k]), k

    def gaps(self, x, u):
        """(observer gap, controller gap), memoised on the last state checked."""
        key = (x.tobytes(), u["t"], id(u["noise"]))
        if self._gap_key != key:
            self._gap_val = (self.obs_gap(x, u)[0], self.ctrl_gap(x, u["t"])[0])
            self._gap_key = key
        return self._gap_val

    def in_jump_set(self, x, u):
        go, gc = self.gaps(x, u)
        return go >= self.scn.obs_gains.delta or gc >= self.scn.ctrl_gains.delta_c

    def jump_map(self, x, u):
        """Observer jump takes precedence; the controller switches on a later
        jump at the same time if still needed."""
        x = x.copy()
        gap, idx = self.obs_gap(x, u)
        if gap >= self.scn.obs_gains.delta:
            E = np.eye(5)
            E[:3, :3] = self.chart_rots[idx - 1]
            x[SL_X] = (E @ x[SL_X].reshape(5, 5)).ravel()
            x[I_OBS] = idx
            u["last_event"] = EVENT_OBS
            return x
        _, k = self.ctrl_gap(x, u["t"])
        x[I_H] = k
        u["last_event"] = EVENT_CTRL
        return x

    def control(self, x, t, kin=None):
        T, J, Jd = kin if kin is not None else kinematics(self.model, x[SL_Q], x[SL_QD])
        Xd, W, err = self.tracking(x, t, T, J)
        h = self.grid[int(x[I_H])]
        js = JointState(x[SL_Q], x[SL_QD])
        if self.scn.command_sign == 1.0:
            out = ctl.control_torque(self.model, js, err.Xe, err.Y, h, self.scn.ctrl_gains,
                                     kin=(T, J, Jd))
        else:
            out = _signed_torque(self.model, js, err, h, self.scn.ctrl_gains,
                                 self.scn.command_sign, (T, J, Jd))
        return out, Xd, W, err

    # -- logging -----------------------------------------------------------

    def record(self, x, t, jt: HybridTime, j_obs, j_ctrl, event, gaps):
        row = np.zeros(len(COLUMNS))
        q, qd = x[SL_Q], x[SL_QD]
        kin = kinematics(self.model, q, qd)
        T, J, _ = kin
        out, Xd, W, err = self.control(x, t, kin)
        X = self.truth(T, J, qd)
        Xh = x[SL_X].reshape(5, 5)
        Xt = X @ inv_se23(Xh)
        h = self.grid[int(x[I_H])]
        U = ctl.potential(err.Xe, h, self.scn.ctrl_gains)
        Vo = float(obs.lyapunov_array(Xt))
        Yv = np.concatenate([err.Y.ang, 0.5 * err.Y.lin])  # phi_bar of the twist matrix
        E = float(obs.cost_array(Xh, self.beta(T, None), self.L.r))

        row[[COL["t"], COL["j"], COL["j_obs"], COL["j_ctrl"], COL["event"]]] = (
            t, jt.j, j_obs, j_ctrl, event)
        row[cols("q", 6)] = q
        row[cols("qd", 6)] = qd
        for pre, M5 in (("", X), ("h", Xh), ("t", Xt)):
            row[mat_cols(f"R{pre}_")] = M5[:3, :3].ravel()
            row[cols(f"v{pre}_", 3)] = M5[:3, 3]
            row[cols(f"p{pre}_", 3)] = M5[:3, 4]
        row[[COL["obs_index"], COL["h_theta"], COL["h_axis"]]] = (x[I_OBS], h.theta, h.axis)
        row[cols("ee_", 3)] = T[:3, 3]
        row[cols("eeh_", 3)] = Xh[:3, 4] + self.origin
        row[mat_cols("Rd_")] = Xd.rot.ravel()
        row[cols("pd_", 3)] = Xd.pos
        row[mat_cols("Re_")] = err.Xe.rot.ravel()
        row[cols("pe_", 3)] = err.Xe.pos
        row[cols("Y", 6)] = err.Y.vector()
        row[cols("Z", 6)] = W.vector()
        row[cols("cmd", 6)] = out.command
        row[[COL["U"], COL["V_o"], COL["V"], COL["E"], COL["gap_obs"], COL["gap_ctrl"]]] = (
            U, Vo, U + Vo + 0.5 * Yv @ Yv, E, gaps[0], gaps[1])
        row[cols("tau", 6)] = out.tau
        row[[COL["sigma_min"], COL["singular"]]] = (out.sigma_min, float(out.singular))
        return row, out


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _signed_torque(model, js, err, h, gains, sign, kin):
    """Torque with the task command scaled by ``sign`` (sabotage fixture)."""
    _, J, Jd = kin
    cmd = sign * ctl.task_command(err.Xe, err.Y, h, gains)
    acc, s_min, mode = ctl.solve_jacobian(J, Jd @ js.qd + cmd)
    M, dM, G = inertia_terms(model, js.q)
    tau = nonlinear_terms(model, js.q, js.qd, dM, G) - M @ acc
    return ctl.ControlOutput(tau, cmd, s_min, mode)


def initial_state(scn: Scenario, loop: ClosedLoop) -> np.ndarray:
    x = np.zeros(STATE_SIZE)
    x[SL_Q] = scn.q0
    x[SL_QD] = scn.qd0
    x[SL_X] = psi_bar(scn.obs_R0, scn.obs_v0, scn.obs_p0 - scn.nav_origin).ravel()
    x[I_OBS] = 0
    # start in the best chart so the first step is not a bookkeeping switch
    T, J, _ = kinematics(scn.model, scn.q0, scn.qd0)
    _, _, err = loop.tracking(x, 0.0, T, J)
    best = ctl.best_chart(err.Xe, scn.ctrl_gains)
    x[I_H] = loop.grid.index(best)
    return x


def run(scn: Scenario, progress: bool = False) -> HybridTrajectory:
    """Simulate the closed loop; one log row per flow step or jump."""
    loop = ClosedLoop(scn)
    exe = Executor(loop.system, dt=scn.dt)
    rng = np.random.default_rng(scn.seed) if scn.landmark_noise > 0 else None
    n_lm = len(scn.landmarks)
    x = initial_state(scn, loop)
    j_obs = j_ctrl = 0
    rows = []
    t = 0.0

    def noise_draw():
        return None if rng is None else rng.normal(0.0, scn.landmark_noise, size=(3, n_lm))

    noise = noise_draw()
    u = {"tau": None, "noise": noise, "t": t}
    gaps = loop.gaps(x, u)
    row, out = loop.record(x, t, exe.time, j_obs, j_ctrl, EVENT_INIT, gaps)
    rows.append(row)
    k = 0
    try:
        for k in range(scn.steps):
            while loop.in_jump_set(x, u):
                x, ev = exe.step(x, u)
                if u["last_event"] == EVENT_OBS:
                    j_obs += 1
                else:
                    j_ctrl += 1
                gaps = loop.gaps(x, u)
                row, out = loop.record(x, t, exe.time, j_obs, j_ctrl, u["last_event"], gaps)
                rows.append(row)
            u = {"tau": out.tau, "noise": noise, "t": t}
            x, ev = exe.step(x, u)
            t = exe.time.t
            noise = noise_draw()
            u = {"tau": None, "noise": noise, "t": t}
            gaps = loop.gaps(x, u)
            row, out = loop.record(x, t, exe.time, j_obs, j_ctrl, EVENT_FLOW, gaps)
            rows.append(row)
            if progress and k % 5000 == 0:
                log.info("t=%.3f j=%d", t, exe.time.j)
    except (HybridError, ModelError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise SimulationError(str(exc), k, exe.time) from exc
    meta = {"substeps": loop.substeps, "delta_obs": scn.obs_gains.delta,
            "delta_ctrl": scn.ctrl_gains.delta_c, "dt": scn.dt, "nav_origin": loop.origin}
    return HybridTrajectory(np.array(rows), meta)


# --------------------------------------------------------------------------
# Certification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CertificationReport:
    passed: bool
    flow_margin_obs: float  # max dV_o/dt over flows
    flow_margin_total: float  # max dV/dt over flows
    flow_pass_obs: bool
    flow_pass_total: bool
    jump_margin_obs: float  # max (V_o+ - V_o + delta) over observer jumps
    jump_margin_total: float  # max (V+ - V + min(delta, delta_c)) over all jumps
    jump_pass_obs: bool
    jump_pass_total: bool
    n_jumps: int

    def lines(self) -> list[str]:
        return [
            f"flow  V_o: {'ok ' if self.flow_pass_obs else 'FAIL'} worst rate {self.flow_margin_obs:.6g}",
            f"flow  V  : {'ok ' if self.flow_pass_total else 'FAIL'} worst rate {self.flow_margin_total:.6g}",
            f"jump  V_o: {'ok ' if self.jump_pass_obs else 'FAIL'} worst margin {self.jump_margin_obs:.6g}",
            f"jump  V  : {'ok ' if self.jump_pass_total else 'FAIL'} worst margin {self.jump_margin_total:.6g}",
            f"jumps: {self.n_jumps}; overall {'PASS' if self.passed else 'FAIL'}",
        ]


def _flow_check(values, t, j, rel_tol):
    worst, ok = -np.inf, True
    for seg in flow_intervals(t, j):
        if seg.size < 2:
            continue
        dt = float(np.min(np.diff(t[seg]))) if seg.size > 1 else 1.0
        rep = monitor_flow(values[seg], dt if dt > 0 else 1.0, rel_tol=rel_tol)
        worst = max(worst, rep.margin)
        ok &= rep.passed
    return (0.0 if worst == -np.inf else worst), bool(ok)


def certify(traj: HybridTrajectory, delta_obs: float, delta_ctrl: float,
            rel_tol: float = 1e-8) -> CertificationReport:
    """Flow and jump decrease checks for V_o and V over the whole log."""
    t, j, ev = traj["t"], traj["j"], traj["event"]
    Vo, V = traj["V_o"], traj["V"]
    fo, po = _flow_check(Vo, t, j, rel_tol)
    fv, pv = _flow_check(V, t, j, rel_tol)
    jo, jv = -np.inf, -np.inf
    ok_o = ok_v = True
    dmin = min(delta_obs, delta_ctrl)
    for i in traj.jumps:
        if ev[i] == EVENT_OBS:
            r = monitor_jump(Vo[i - 1], Vo[i], delta_obs)
            jo = max(jo, r.margin)
            ok_o &= r.passed
        r = monitor_jump(V[i - 1], V[i], dmin)
        jv = max(jv, r.margin)
        ok_v &= r.passed
    jo = 0.0 if jo == -np.inf else jo
    jv = 0.0 if jv == -np.inf else jv
    return CertificationReport(bool(po and pv and ok_o and ok_v), float(fo), float(fv),
                               po, pv, float(jo), float(jv), bool(ok_o), bool(ok_v),
                               int(traj.jumps.size))


# --------------------------------------------------------------------------
# Derived series
# --------------------------------------------------------------------------

PLOT_COLUMNS = {
    "path3d": ["t"] + _names("pd_", 3) + _names("ee_", 3) + _names("eeh_", 3),
    "esterr": ["t", "j_obs", "p_err", "R_err", "V_o"],
    "trackerr": ["t", "j_ctrl", "pos_err", "rot_err", "U", "V"],
    "torque": ["t"] + _names("tau", 6) + ["singular"],
}


def plot_data(traj: HybridTrajectory, what: str) -> tuple[list[str], np.ndarray]:
    if what not in PLOT_COLUMNS:
        raise ValidationError(f"unknown plot set {what!r}")
    names = PLOT_COLUMNS[what]
    derived = {
        "p_err": np.linalg.norm(traj.block("pt_", 3), axis=1),
        "R_err": np.linalg.norm(np.eye(3) - traj.rotations("Rt_"), axis=(1, 2)),
        "pos_err": np.linalg.norm(traj.block("ee_", 3) - traj.block("pd_", 3), axis=1),
        "rot_err": np.linalg.norm(
            np.eye(3) - np.swapaxes(traj.rotations("Rd_"), 1, 2) @ traj.rotations("R_"), axis=(1, 2)),
    }
    out = np.column_stack([derived[n] if n in derived else traj[n] for n in names])
    return names, out


def side_errors(traj: HybridTrajectory, ref: ctl.ReferenceTrajectory, settle: float = 0.5,
                skip: float = 0.0) -> np.ndarray:
    """Per-side steady-state tracking error: the max true position error over
    the last ``settle`` fraction of each side traversal that starts at or after
    ``skip`` seconds. Returns rows ``(side_start_time, max_error)``."""
    t = traj["t"]
    err = np.linalg.norm(traj.block("ee_", 3) - traj.block("pd_", 3), axis=1)
    out = []
    k = 0
    while True:
        seg = ref.segments[k % len(ref.segments)]
        start = (k // len(ref.segments)) * ref.period + seg.t0
        end = start + seg.duration
        if end > t[-1] + 1e-9:
            break
        if start >= skip - 1e-9:
            m = (t >= end - settle * seg.duration - 1e-12) & (t <= end + 1e-12)
            out.append((start, float(np.max(err[m]))))
        k += 1
    return np.array(out).reshape(-1, 2)
