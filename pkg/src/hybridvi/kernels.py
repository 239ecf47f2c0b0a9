"""Kernel backend selection.

The compiled extension is used when importable; set ``HYBRIDVI_BACKEND=python``
to force the NumPy fallback.
"""
import os

from . import _kernels_py as python_backend

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("HYBRIDVI_BACKEND", "").lower() != "python":
    backend = compiled_backend
    BACKEND = "compiled"
else:
    backend = python_backend
    BACKEND = "python"

kinematics = backend.kinematics
dynamics = backend.dynamics
link_frames = backend.link_frames


def available():
    return {"python": python_backend, **({"compiled": compiled_backend} if compiled_backend else {})}
