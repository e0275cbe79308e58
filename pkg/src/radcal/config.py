"""Pipeline configuration with a flat, serializable schema."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .camera import CameraModel
from .optim.lm import LmConfig
from .robust import RNG_NAME

# Values the literature leaves open; reported as warnings when left at default.
ENGINEERING_DEFAULTS = {
    "stage1_threshold": "radial inlier threshold of 4 px",
    "stage1_min_inliers": "at least 20 inliers per registered image",
    "stage2_trials": "50 rig-initialization trials",
    "axes_conditioning": "non-parallel-axes check at sigma ratio 0.03 (about 3.4 degrees)",
    "pose_graph_weight": "pose-graph translation weight 1 (rad/m)^2",
    "upgrade_threshold": "upgrade reprojection threshold of 2 px",
    "upgrade_min_inlier_ratio": "upgrade needs 25% inliers per camera",
    "upgrade_n_dist": "two-coefficient division model for the upgrade",
}


@dataclass
class CalibrationConfig:
    camera_model: str = "radtan"
    seed: int = 0
    workers: int = 1
    rng: str = RNG_NAME
    # stage 1: per-image radial pose RANSAC
    stage1_threshold: float = 4.0
    stage1_confidence: float = 0.999
    stage1_max_iterations: int = 1000
    stage1_min_iterations: int = 10
    stage1_min_inliers: int = 20
    # stage 2: greedy rig averaging
    stage2_trials: int = 50
    stage2_early_exit_ratio: float = 0.9
    axes_conditioning: float = 0.03
    pose_graph_weight: float = 1.0
    # stage 3: radial bundle adjustment
    min_pp_observations: int = 30
    # stage 4: forward translation and intrinsics
    upgrade_threshold: float = 2.0
    upgrade_confidence: float = 0.999
    upgrade_max_iterations: int = 1000
    upgrade_min_inliers: int = 20
    upgrade_min_inlier_ratio: float = 0.25
    upgrade_n_dist: int = 2
    # stage 5: full bundle adjustment
    optimize_points: bool = False
    # Levenberg-Marquardt
    lm: LmConfig = field(default_factory=LmConfig)

    def __post_init__(self):
        self.camera_model = CameraModel.parse(self.camera_model).value
        if isinstance(self.lm, dict):
            self.lm = LmConfig(**self.lm)
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.stage2_trials < 1:
            raise ValueError("stage2_trials must be at least 1")
        if not self.stage1_threshold > 0 or not self.upgrade_threshold > 0:
            raise ValueError("thresholds must be positive")
        if not 0 <= self.upgrade_n_dist <= 2:
            raise ValueError("upgrade_n_dist must be 0, 1 or 2")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def defaults_used(self):
        """Descriptions of engineering defaults still at their default value."""
        base = CalibrationConfig()
        return [text for key, text in ENGINEERING_DEFAULTS.items() if getattr(self, key) == getattr(base, key)]
