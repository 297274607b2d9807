"""signforge: synthetic traffic-sign training data and detection evaluation."""

__version__ = "0.1.0"

from .corpus import (
    BACKGROUND_SIZE,
    BackgroundRecord,
    CocoIndex,
    ExclusionPolicy,
    filter_backgrounds,
    parse_coco_annotations,
    standardize_background,
)
from .dataset_io import Detection, GroundTruthBox
from .detection_eval import EvalReport, evaluate
from .errors import SignforgeError
from .synthesizer import (
    GenerationConfig,
    PlacedSign,
    SyntheticSample,
    derive_sample_rng,
    generate_dataset,
    plan_placements,
    synthesize_sample,
)
from .template_catalog import Catalog, Template, load_catalog

__all__ = [
    "BACKGROUND_SIZE",
    "BackgroundRecord",
    "Catalog",
    "CocoIndex",
    "Detection",
    "EvalReport",
    "ExclusionPolicy",
    "GenerationConfig",
    "GroundTruthBox",
    "PlacedSign",
    "SignforgeError",
    "SyntheticSample",
    "Template",
    "derive_sample_rng",
    "evaluate",
    "filter_backgrounds",
    "generate_dataset",
    "load_catalog",
    "parse_coco_annotations",
    "plan_placements",
    "standardize_background",
    "synthesize_sample",
]
