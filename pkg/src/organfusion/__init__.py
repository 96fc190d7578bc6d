"""Organ-detection evaluation, organ-routed species-probability fusion and
long-tail dataset tooling for plant species identification."""

from .classeval import (
    AccuracyReport,
    ConfusionMatrix,
    FallbackPolicy,
    evaluate_organ_classifiers,
    evaluate_species_id,
)
from .data import (
    ORGANS,
    DatasetManifest,
    Detection,
    GroundTruthAnnotation,
    ImageRecord,
    OrganClass,
    RoiPrediction,
    SpeciesDistribution,
    load_detections,
    load_manifest,
    load_roi_predictions,
)
from .datatools import SplitSpec, compute_stats, down_select, split_dataset
from .detection import (
    ApReport,
    EvalConfig,
    MatchResult,
    PrecisionRecallCurve,
    average_precision,
    evaluate_detections,
    match_detections,
    nms,
)
from .fusion import (
    FusedPrediction,
    FusionRule,
    OrganPrior,
    fuse_product,
    fuse_sum,
    fuse_vote,
    predict_species,
)
from .geometry import BoundingBox, area, iou
from .synth import ScenarioCorpus, SimulatorConfig, generate

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport",
    "ApReport",
    "BoundingBox",
    "ConfusionMatrix",
    "DatasetManifest",
    "Detection",
    "EvalConfig",
    "FallbackPolicy",
    "FusedPrediction",
    "FusionRule",
    "GroundTruthAnnotation",
    "ImageRecord",
    "MatchResult",
    "ORGANS",
    "OrganClass",
    "OrganPrior",
    "PrecisionRecallCurve",
    "RoiPrediction",
    "ScenarioCorpus",
    "SimulatorConfig",
    "SpeciesDistribution",
    "SplitSpec",
    "area",
    "average_precision",
    "compute_stats",
    "down_select",
    "evaluate_detections",
    "evaluate_organ_classifiers",
    "evaluate_species_id",
    "fuse_product",
    "fuse_sum",
    "fuse_vote",
    "generate",
    "iou",
    "load_detections",
    "load_manifest",
    "load_roi_predictions",
    "match_detections",
    "nms",
    "predict_species",
    "split_dataset",
]
