"""Fixed-step executor for hybrid systems (flow set / jump set) and the
trajectory-based Lyapunov decrease monitors.

The monitors check only the flow and jump decrease conditions. The
sandwich bounds on V (class-K comparison with the distance to the attractor)
cannot be established from sampled trajectories and are not checked.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

DEFAULT_DT = 1e-3
DEFAULT_MAX_JUMPS = 10


class HybridError(RuntimeError):
    pass


class DomainViolation(HybridError):
    """State lies in neither the flow set nor the jump set."""


class NumericalBlowup(HybridError):
    pass


class ZenoError(HybridError):
    """Too many consecutive jumps at one instant."""


@dataclass
class HybridSystem:
    """H = (C, f, D, g) acting on flat float arrays.

    ``flow_map(x, u)`` returns dx/dt with the shape of ``x``; discrete
    components simply have zero derivative. ``project`` (optional) maps a
    flowed state back onto its manifold after each step.
    """

    flow_map: Callable[[np.ndarray, Any], np.ndarray]
    jump_map: Callable[[np.ndarray, Any], np.ndarray]
    in_flow_set: Callable[[np.ndarray, Any], bool]
    in_jump_set: Callable[[np.ndarray, Any], bool]
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None
    substeps: int = 1


@dataclass(frozen=True, order=True)
class HybridTime:
    t: float
    j: int


@dataclass(frozen=True)
class StepEvent:
    time: HybridTime
    jumped: bool


def rk4_step(f, x, u, dt: float, substeps: int = 1):
    h = dt / substeps
    for _ in range(substeps):
        k1 = f(x, u)
        k2 = f(x + 0.5 * h * k1, u)
        k3 = f(x + 0.5 * h * k2, u)
        k4 = f(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


@dataclass
class Executor:
    """Advances one hybrid system along a hybrid time domain.

    Jumps take priority when the state is in both C and D. Each call to
    :meth:`step` performs at most one jump or one flow step.
    """

    system: HybridSystem
    dt: float = DEFAULT_DT
    max_jumps: int = DEFAULT_MAX_JUMPS
    time: HybridTime = field(default_factory=lambda: HybridTime(0.0, 0))
    _flow_steps: int = 0
    _consecutive_jumps: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def step(self, x, u=None):
        sys = self.system
        if sys.in_jump_set(x, u):
            self._consecutive_jumps += 1
            if self._consecutive_jumps > self.max_jumps:
                raise ZenoError(
                    f"more than {self.max_jumps} consecutive jumps at t={self.time.t}"
                )
            x_new = np.asarray(sys.jump_map(x, u), dtype=float)
            self.time = HybridTime(self.time.t, self.time.j + 1)
            jumped = True
        elif sys.in_flow_set(x, u):
            x_new = rk4_step(sys.flow_map, np.asarray(x, dtype=float), u, self.dt, sys.substeps)
            if sys.project is not None:
                x_new = sys.project(x_new)
            self._flow_steps += 1
            self._consecutive_jumps = 0
            # multiply rather than accumulate so t stays exact on the grid
            self.time = HybridTime(self._flow_steps * self.dt, self.time.j)
            jumped = False
        else:
            raise DomainViolation(f"state outside C and D at {self.time}")
        if not np.all(np.isfinite(x_new)):
            raise NumericalBlowup(f"non-finite state after step at {self.time}")
        return x_new, StepEvent(self.time, jumped)


def step(system: HybridSystem, x, u, dt: float, time: HybridTime = HybridTime(0.0, 0)):
    """Single stateless step; returns ``(x', HybridTime)``.

    Convenience wrapper: the Zeno guard needs an :class:`Executor`.
    """
    ex = Executor(system, dt, time=time)
    ex._flow_steps = int(round(time.t / dt))
    x_new, ev = ex.step(x, u)
    return x_new, ev.time


# --------------------------------------------------------------------------
# Lyapunov monitors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DecreaseReport:
    passed: bool
    margin: float
    worst_index: int = -1
    count: int = 0


def monitor_flow(values, dt: float, s2: float = 0.0, rel_tol: float = 1e-8,
                 abs_tol: float = 1e-12) -> DecreaseReport:
    """Check ``dV/dt <= -s2 V`` on samples from one flow interval.

    ``margin`` is ``max_k (V[k+1]-V[k])/dt + s2 V[k]``. A step passes when its
    increase is within ``rel_tol * V[k] + abs_tol``.
    """
    V = np.asarray(values, dtype=float)
    if V.size < 2:
        return DecreaseReport(True, 0.0, -1, 0)
    rate = np.diff(V) / dt + s2 * V[:-1]
    slack = rate * dt - (rel_tol * np.abs(V[:-1]) + abs_tol)
    k = int(np.argmax(rate))
    return DecreaseReport(bool(np.all(slack <= 0.0)), float(rate[k]), k, int(rate.size))


def monitor_jump(v_before: float, v_after: float, delta: float,
                 tol: float = 1e-9) -> DecreaseReport:
    """Check ``V+ - V <= -delta`` at a jump; margin is ``V+ - V + delta``."""
    margin = float(v_after - v_before + delta)
    return DecreaseReport(margin <= tol, margin, 0, 1)


def flow_intervals(t, j):
    """Split sample indices into maximal runs of constant jump counter."""
    t = np.asarray(t)
    j = np.asarray(j)
    if t.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(j) != 0) + 1
    return [seg for seg in np.split(np.arange(t.size), cuts) if seg.size]
