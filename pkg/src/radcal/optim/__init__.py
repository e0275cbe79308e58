from .lm import JacobianBuilder, LeastSquaresProblem, LmConfig, LmReport, ParamSet, VectorProblem, lm_minimize, robust_cost
from .problems import (
    FullBundleProblem,
    Observations,
    PoseGraphProblem,
    RadialBundleProblem,
    UpgradeProblem,
    full_bundle_adjust,
    full_cost,
    optimize_pose_graph,
    pose_graph_cost,
    radial_bundle_adjust,
    radial_cost,
    refine_upgrade,
    reprojection_residuals,
    valid_depth_mask,
)

__all__ = [
    "FullBundleProblem",
    "JacobianBuilder",
    "LeastSquaresProblem",
    "LmConfig",
    "LmReport",
    "Observations",
    "ParamSet",
    "PoseGraphProblem",
    "RadialBundleProblem",
    "UpgradeProblem",
    "full_bundle_adjust",
    "full_cost",
    "lm_minimize",
    "optimize_pose_graph",
    "pose_graph_cost",
    "radial_bundle_adjust",
    "radial_cost",
    "refine_upgrade",
    "reprojection_residuals",
    "robust_cost",
    "valid_depth_mask",
    "VectorProblem",
]
