"""Deterministic face-shape editing in a generator latent space.

Semantic face features are linear combinations of 98 facial landmark
coordinates.  A transformer editor learns per-feature direction vectors
in the generator's layer-wise latent space; a small scaling network maps
(current value, target value) to a step size along that direction.
"""

from faceshape.editor import (
    EditorConfig,
    EditPipeline,
    EditResult,
    FaceEditor,
    load_checkpoint,
    load_pipeline,
    save_checkpoint,
)
from faceshape.errors import (
    DegenerateStatisticsError,
    FaceshapeError,
    FrozenBackboneError,
    NotReadyError,
    TrainingDivergedError,
)
from faceshape.evaluation import (
    EvalReport,
    ablation_suite,
    edit_error,
    entanglement,
    evaluate,
    pixel_error,
)
from faceshape.landmarks import (
    FEATURE_COUNT,
    LANDMARK_COUNT,
    FeatureDefinition,
    LandmarkSet,
    compute_all_features,
    compute_feature,
    feature_catalog,
    feature_weight_matrix,
    read_landmark_file,
)
from faceshape.stats import (
    FeatureStats,
    correlation_matrix,
    fit_stats,
    load_correlation,
    save_correlation,
)
from faceshape.training import (
    LossWeights,
    TrainingConfig,
    fit_backend_stats,
    loss_feat,
    loss_pix,
    loss_sff,
    total_loss,
    train,
)
from faceshape.world import (
    BackendDescriptor,
    LandmarkDetector,
    LandmarkSource,
    SyntheticFaceBackend,
    build_backend,
    train_landmark_detector,
)

__version__ = "0.1.0"

__all__ = [
    "FEATURE_COUNT",
    "LANDMARK_COUNT",
    "FeatureDefinition",
    "LandmarkSet",
    "compute_all_features",
    "compute_feature",
    "feature_catalog",
    "feature_weight_matrix",
    "read_landmark_file",
    "FeatureStats",
    "correlation_matrix",
    "fit_stats",
    "load_correlation",
    "save_correlation",
    "BackendDescriptor",
    "SyntheticFaceBackend",
    "LandmarkDetector",
    "LandmarkSource",
    "build_backend",
    "train_landmark_detector",
    "EditorConfig",
    "EditPipeline",
    "EditResult",
    "FaceEditor",
    "save_checkpoint",
    "load_checkpoint",
    "load_pipeline",
    "LossWeights",
    "TrainingConfig",
    "fit_backend_stats",
    "loss_pix",
    "loss_feat",
    "loss_sff",
    "total_loss",
    "train",
    "EvalReport",
    "evaluate",
    "ablation_suite",
    "pixel_error",
    "edit_error",
    "entanglement",
    "FaceshapeError",
    "DegenerateStatisticsError",
    "NotReadyError",
    "FrozenBackboneError",
    "TrainingDivergedError",
    "__version__",
]
