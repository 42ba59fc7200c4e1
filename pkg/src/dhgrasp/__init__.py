"""Dual-hand grasp toolkit: symmetric mirroring, contact representation, metrics and generator maths."""

__version__ = "0.1.0"

from .geometry import GeometryError, ObjectModel, PointCloud, TriMesh  # noqa: E402
from .hand_model import HandPose, HandSurface, default_template, forward_kinematics, mirror_pose  # noqa: E402
from .symmetry import SymmetryReport, detect_symmetry_plane  # noqa: E402
from .symopt import DualGrasp, EnergyConfig, run_symopt  # noqa: E402

__all__ = [
    "DualGrasp",
    "EnergyConfig",
    "GeometryError",
    "HandPose",
    "HandSurface",
    "ObjectModel",
    "PointCloud",
    "SymmetryReport",
    "TriMesh",
    "default_template",
    "detect_symmetry_plane",
    "forward_kinematics",
    "mirror_pose",
    "run_symopt",
]
