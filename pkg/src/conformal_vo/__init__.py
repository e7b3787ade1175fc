"""Conformalized multimodal pose-uncertainty regression and reasoning."""

from .geometry import (
    Pose,
    Trajectory,
    compose_rotation,
    quat_distance,
    quat_to_rotmat,
    rotmat_to_quat,
)
from .discretize import QuantileGrid, decode, decode_midpoint, encode, fit_grid
from .conformal import (
    CalibratedModel,
    PredictionSet,
    UncertaintyRegion,
    calibrate,
    conformal_quantile,
    coverage_audit,
    predict_set,
    to_region,
)
from .classifier import (
    MultiHeadModel,
    RegressionBaseline,
    extract_features,
    predict_scores,
    train_baseline,
    train_multihead,
)
from .vision import (
    Correspondences,
    Intrinsics,
    RelativeMotion,
    SyntheticScene,
    decompose_essential,
    estimate_essential,
    harris_corners,
    lucas_kanade,
    render,
)
from .reasoning import CandidatePose, enumerate_candidates, rollout, select_orientation, select_position
from .baseline import baseline_rollout, rmse
from .world import generate_world

__version__ = "0.1.0"

__all__ = [
    "Pose", "Trajectory", "compose_rotation", "quat_distance", "quat_to_rotmat",
    "rotmat_to_quat", "QuantileGrid", "fit_grid", "encode", "decode", "decode_midpoint",
    "CalibratedModel", "PredictionSet", "UncertaintyRegion", "calibrate",
    "conformal_quantile", "coverage_audit", "predict_set", "to_region",
    "MultiHeadModel", "RegressionBaseline", "extract_features", "predict_scores",
    "train_baseline", "train_multihead", "Correspondences", "Intrinsics",
    "RelativeMotion", "SyntheticScene", "decompose_essential", "estimate_essential",
    "harris_corners", "lucas_kanade", "render", "CandidatePose", "enumerate_candidates",
    "rollout", "select_orientation", "select_position", "baseline_rollout", "rmse",
    "generate_world",
]
