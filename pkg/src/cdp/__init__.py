"""Consensus-driven propagation over committee k-NN graphs.

Given a base embedding view and N committee views of the same samples,
this package builds per-view cosine k-NN graphs, scores the base graph's
candidate pairs with a committee-consensus classifier (the mediator),
assembles the selected pairs into a weighted consensus graph, and
propagates pseudo-labels by recursive connected-component splitting.
"""

from .dataset import (
    EmbeddingSet,
    GroundTruth,
    Split,
    SyntheticConfig,
    SyntheticData,
    generate_synthetic,
)
from .evaluation import (
    ClusterMetrics,
    PairMetrics,
    ReportRow,
    ablation_run,
    cluster_metrics,
    hierarchical_baseline,
    pair_metrics,
)
from .features import (
    NodeNeighborStats,
    affinity_vector,
    assemble_feature_matrix,
    assemble_mediator_input,
    feature_length,
    neighbor_stats,
    relationship_vector,
)
from .knn import KnnGraph, build_knn_graph, candidate_pairs, cosine_similarity
from .mediator import (
    MediatorModel,
    SelectedEdge,
    TrainConfig,
    build_training_pairs,
    inspect_first_layer,
    predict,
    select_pairs,
    train_mediator,
    vote_select,
)
from .propagation import (
    ConsensusGraph,
    LabelAssignment,
    SoftLabels,
    connected_components,
    propagate,
    soft_labels,
)

__version__ = "0.1.0"

__all__ = [
    "EmbeddingSet", "GroundTruth", "Split", "SyntheticConfig", "SyntheticData",
    "generate_synthetic",
    "KnnGraph", "build_knn_graph", "candidate_pairs", "cosine_similarity",
    "NodeNeighborStats", "feature_length", "neighbor_stats",
    "relationship_vector", "affinity_vector",
    "assemble_mediator_input", "assemble_feature_matrix",
    "MediatorModel", "TrainConfig", "SelectedEdge", "train_mediator", "predict",
    "select_pairs", "vote_select", "build_training_pairs", "inspect_first_layer",
    "ConsensusGraph", "LabelAssignment", "SoftLabels",
    "connected_components", "propagate", "soft_labels",
    "PairMetrics", "ClusterMetrics", "ReportRow",
    "pair_metrics", "cluster_metrics", "hierarchical_baseline", "ablation_run",
    "__version__",
]
