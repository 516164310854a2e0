"""Relation-aware multi-object tracking on synthetic crowd scenes."""

from .autodiff import (
    GruCellParams,
    ParameterStore,
    Tensor,
    adam_step,
    backward,
    gradient_check,
    gru_cell,
    no_grad,
    xavier_init,
)
from .geometry import BoundingBox, DistanceMatrix, adjacency, giou, giou_loss, iou, scaled_distance
from .rem import (
    RelationEmbedding,
    RemParameters,
    RemState,
    attention_coefficients,
    message,
    node_feature,
    relation_importance,
    rem_step,
    spatiotemporal_update,
)
from .metrics import (
    FrameMatching,
    MetricsReport,
    clear_mot,
    evaluate,
    hota,
    idf1,
    match_frame,
    mt_ml,
)
from .simulator import Detection, GroundTruthSequence, ScenarioConfig, detect, detect_sequence, generate
from .st_graph import NodeId, SpatioTemporalGraph, build_graph, neighbors, update_graph
from .tracker import (
    TrackerParameters,
    TrainConfig,
    TrainResult,
    appearance_feature,
    regress_baseline,
    regress_from_relations,
    regress_relation_aware,
    track_sequence,
    train,
)

__all__ = [
    "BoundingBox",
    "Detection",
    "DistanceMatrix",
    "FrameMatching",
    "GroundTruthSequence",
    "GruCellParams",
    "MetricsReport",
    "NodeId",
    "ParameterStore",
    "RelationEmbedding",
    "RemParameters",
    "RemState",
    "ScenarioConfig",
    "SpatioTemporalGraph",
    "Tensor",
    "TrackerParameters",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "adjacency",
    "appearance_feature",
    "attention_coefficients",
    "backward",
    "build_graph",
    "clear_mot",
    "detect",
    "detect_sequence",
    "evaluate",
    "generate",
    "giou",
    "giou_loss",
    "gradient_check",
    "gru_cell",
    "hota",
    "idf1",
    "iou",
    "match_frame",
    "message",
    "mt_ml",
    "neighbors",
    "no_grad",
    "node_feature",
    "regress_baseline",
    "regress_from_relations",
    "regress_relation_aware",
    "relation_importance",
    "rem_step",
    "scaled_distance",
    "spatiotemporal_update",
    "track_sequence",
    "train",
    "update_graph",
    "xavier_init",
]

__version__ = "0.1.0"
