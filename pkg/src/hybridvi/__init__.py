"""Hybrid visual-inertial observer on SE2(3) and hybrid task-space controller
on SE(3), closed around a simulated serial manipulator."""
from .geom import ExtendedPose, NavInput, Pose, Twist
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["ExtendedPose", "NavInput", "Pose", "Twist", "BACKEND", "__version__"]
