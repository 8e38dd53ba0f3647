"""Weakly supervised abnormality localization for long frame-feature sequences.

Pipeline: penalized change-point segmentation of a video's feature rows,
a complete similarity graph per segment, a two-layer message-passing
classifier trained on segment-level weak labels, and an inference-time
temporal pool that ranks and selects the top-k frames per abnormal
segment, evaluated with the coverage metric.
"""

from .dataio import (
    Annotations,
    FeatureMatrix,
    SynthConfig,
    derive_segment_labels,
    read_annotations,
    read_feature_matrix,
    synth_video,
    write_annotations,
    write_feature_matrix,
)
from .graph import SegmentGraph, SimilarityConfig, build_graph, build_segment_graphs
from .localization import LocalizationResult, coverage, node_scores, topk_select
from .metrics import ConfusionCounts, MetricsReport, confusion, coverage_curve, weighted_metrics
from .model import (
    ModelParams,
    TrainConfig,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .segmentation import (
    Partition,
    SegmentationConfig,
    default_penalty,
    optimal_partition_oracle,
    pelt,
    segment_cost,
    split_video,
)

__version__ = "0.1.0"

__all__ = [
    "Annotations",
    "ConfusionCounts",
    "FeatureMatrix",
    "LocalizationResult",
    "MetricsReport",
    "ModelParams",
    "Partition",
    "SegmentGraph",
    "SegmentationConfig",
    "SimilarityConfig",
    "SynthConfig",
    "TrainConfig",
    "build_graph",
    "build_segment_graphs",
    "confusion",
    "coverage",
    "coverage_curve",
    "default_penalty",
    "derive_segment_labels",
    "forward",
    "init_params",
    "load_checkpoint",
    "node_scores",
    "optimal_partition_oracle",
    "pelt",
    "read_annotations",
    "read_feature_matrix",
    "save_checkpoint",
    "segment_cost",
    "split_video",
    "synth_video",
    "topk_select",
    "train",
    "weighted_metrics",
    "write_annotations",
    "write_feature_matrix",
]
