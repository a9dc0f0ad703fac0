"""Selective, semantically weighted point-to-plane ICP localization of a
LiDAR-equipped robot in deviating 3D building models, with a sensor
simulator and the evaluation metrics to study it.
"""

from .geometry import PoseDelta, RigidTransform, compose, invert, pose_delta
from .model import (
    BuildingModel,
    Deviation,
    Floorplan2D,
    MapCloud,
    ReferenceSet,
    Surface,
    WallSegment,
    apply_deviation,
    extrude_floorplan,
    load_model,
    sample_model,
    save_model,
    validate_reference_set,
)
from .sensor_sim import (
    CameraSpec,
    DensityImage,
    DensityOracleParams,
    LidarSpec,
    PrismSpec,
    RawScan,
    Scene,
    default_camera_rig,
    generate_trial_sequence,
    prism_position,
    raycast_scan,
    render_density_image,
)
from .fusion import FusionConfig, Scan, fuse_densities, weights_binary, weights_linear
from .registration import (
    FailureReason,
    IcpConfig,
    IcpResult,
    LocalizationResult,
    MapIndex,
    SelectiveConfig,
    localize,
    point_to_plane_icp,
    selective_localize,
)
from .metrics import (
    MetricsReport,
    TrialRecord,
    accuracy_rmse,
    average_executions,
    compute_report,
    failure_rate,
    ground_truth_correction,
    position_repeatability,
    rotation_repeatability,
)

__version__ = "0.1.0"

__all__ = [
    "BuildingModel",
    "CameraSpec",
    "compose",
    "default_camera_rig",
    "DensityImage",
    "DensityOracleParams",
    "Deviation",
    "extrude_floorplan",
    "FailureReason",
    "Floorplan2D",
    "FusionConfig",
    "fuse_densities",
    "generate_trial_sequence",
    "IcpConfig",
    "IcpResult",
    "invert",
    "LidarSpec",
    "load_model",
    "localize",
    "LocalizationResult",
    "MapCloud",
    "MapIndex",
    "MetricsReport",
    "PoseDelta",
    "pose_delta",
    "point_to_plane_icp",
    "PrismSpec",
    "prism_position",
    "RawScan",
    "raycast_scan",
    "ReferenceSet",
    "render_density_image",
    "RigidTransform",
    "sample_model",
    "save_model",
    "Scan",
    "Scene",
    "SelectiveConfig",
    "selective_localize",
    "Surface",
    "TrialRecord",
    "validate_reference_set",
    "WallSegment",
    "weights_binary",
    "weights_linear",
    "accuracy_rmse",
    "apply_deviation",
    "average_executions",
    "compute_report",
    "failure_rate",
    "ground_truth_correction",
    "position_repeatability",
    "rotation_repeatability",
]
