"""Uncertainty-aware bird's-eye-view drivable maps, candidate weighting,
lane regularization and calibration, on synthetic scenes."""

__version__ = "0.1.0"

from .bev_core import (
    ClassTaxonomy,
    ConfigurationError,
    DataError,
    GridSpec,
    SemanticGrid,
    pixel_to_world,
    project_to_grid,
)
from .lane_reg import CenterlineField, build_gt_intent_mask, centerline_loss, intent_loss, lane_loss, match_nearest
from .losses import (
    CalibrationReport,
    LossWeights,
    bev_loss,
    dice_loss,
    expected_calibration_error,
    focal_loss,
    total_loss,
)
from .planner import (
    CandidateSet,
    NoSafePlanError,
    ScoredPlan,
    Trajectory,
    min_safety,
    planning_loss,
    rasterize_path,
    select_plan,
    weight_candidates,
)
from .report import LossReport
from .scenegen import AgentBox, AmbiguityRegion, ScenarioSpec, generate_candidates, generate_expert, generate_scene
from .uncertainty import (
    DrivableScoreMap,
    LogitField,
    McConfig,
    build_score_map,
    expected_probabilities,
    group_entropy,
    group_probability,
    perception_loss,
    safety_score,
    sample_logits,
)
