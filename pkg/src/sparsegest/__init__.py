"""Sparse streaming gesture recognition with tiny externally-stated RNNs.

A motion analyzer watches the skeleton stream, a one-layer detector decides
whether a gesture is under way, and a three-layer recognizer wakes up only
for detected gestures.
"""
__version__ = "0.1.0"

from .analyzer import AnalyzerConfig, AnalyzerState
from .data import Dataset, Sequence, Span, SynthConfig, generate_synthetic, load_canonical, load_shrec2021, save_canonical
from .errors import (
    AnnotationError,
    ConfigError,
    DataError,
    NumericError,
    ParseError,
    ProtocolError,
    SchemaError,
    ShapeError,
    SpanError,
    SparseGestError,
    VersionError,
)
from .evaluation import EvalReport, evaluate_online
from .metrics import (
    detection_rate,
    early_detection_latency,
    false_positive_rate,
    jaccard_index,
    match_predictions,
    real_time_factor,
    temporal_iou,
)
from .model import (
    DetectorModel,
    ExternalHiddenState,
    ModelConfig,
    RecognizerModel,
    count_parameters,
    detector_config,
    load_model,
    recognizer_config,
    save_model,
)
from .pipeline import GestureEvent, PipelineConfig, StreamSession, apply_ablation, with_preset
from .training import TrainingConfig, train

__all__ = [
    "__version__",
    "AnalyzerConfig",
    "AnalyzerState",
    "Dataset",
    "Sequence",
    "Span",
    "SynthConfig",
    "generate_synthetic",
    "load_canonical",
    "load_shrec2021",
    "save_canonical",
    "AnnotationError",
    "ConfigError",
    "DataError",
    "NumericError",
    "ParseError",
    "ProtocolError",
    "SchemaError",
    "ShapeError",
    "SpanError",
    "SparseGestError",
    "VersionError",
    "EvalReport",
    "evaluate_online",
    "detection_rate",
    "early_detection_latency",
    "false_positive_rate",
    "jaccard_index",
    "match_predictions",
    "real_time_factor",
    "temporal_iou",
    "DetectorModel",
    "ExternalHiddenState",
    "ModelConfig",
    "RecognizerModel",
    "count_parameters",
    "detector_config",
    "load_model",
    "recognizer_config",
    "save_model",
    "GestureEvent",
    "PipelineConfig",
    "StreamSession",
    "apply_ablation",
    "with_preset",
    "TrainingConfig",
    "train",
]
