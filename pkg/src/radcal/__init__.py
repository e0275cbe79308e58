"""Multi-camera rig calibration from a sparse map, pose first and intrinsics later."""

from .camera import CameraIntrinsics, CameraModel, DivisionModel, project, undistort_division
from .config import CalibrationConfig
from .geometry import RadialPose, RigidPose, Rotation, radial_from_full, radial_residual
from .pipeline import calibrate
from .session import CalibrationResult, CalibrationSession, Frameset, ImageObservations

__version__ = "0.1.0"

__all__ = [
    "CalibrationConfig",
    "CalibrationResult",
    "CalibrationSession",
    "CameraIntrinsics",
    "CameraModel",
    "DivisionModel",
    "Frameset",
    "ImageObservations",
    "RadialPose",
    "RigidPose",
    "Rotation",
    "calibrate",
    "project",
    "radial_from_full",
    "radial_residual",
    "undistort_division",
]
