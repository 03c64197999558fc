"""Open-vocabulary proposal mining and class-wise score calibration.

Numerical pipelines over precomputed embeddings: pairing caption
concepts with region proposals, scoring mined sets against each other,
and flattening frequency-driven confidence bias with density-peak
clustering. A synthetic benchmark with known ground truth exercises the
whole chain.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .augment import AttentionWeights, augment_concepts, load_weights, random_weights
from .calibrate import (
    BiasEntry,
    BiasVector,
    ClusterParams,
    ClusterResult,
    adjust_scores,
    compute_bias,
    density_peak_cluster,
    load_bias,
    save_bias,
)
from .geometry import BBox, enclose, iou
from .matching import (
    MatchParams,
    attention_step,
    matching_loss,
    pairwise_similarity,
    set_similarity,
)
from .mining import (
    MinedConcept,
    MinedProposal,
    MinedSet,
    MiningParams,
    merge_fragments,
    mine_image,
    read_mined_sets,
    similarity_entropy,
    score_matrix,
    weighted_similarity,
    write_mined_sets,
)
from .synth import (
    GroundTruth,
    WorldConfig,
    evaluate_bias,
    evaluate_mining,
    generate_world,
    load_truth,
    score_labels,
)
from .tensorio import (
    ConceptRecord,
    DataError,
    Dataset,
    ImageRecord,
    ProposalRecord,
    Tensor,
    Vocabulary,
    load_dataset,
    parse_manifest,
    read_tensor,
    write_tensor,
)

__all__ = [
    "AttentionWeights",
    "BBox",
    "BiasEntry",
    "BiasVector",
    "ClusterParams",
    "ClusterResult",
    "ConceptRecord",
    "DataError",
    "Dataset",
    "GroundTruth",
    "ImageRecord",
    "MatchParams",
    "MinedConcept",
    "MinedProposal",
    "MinedSet",
    "MiningParams",
    "ProposalRecord",
    "Tensor",
    "Vocabulary",
    "WorldConfig",
    "adjust_scores",
    "attention_step",
    "augment_concepts",
    "compute_bias",
    "density_peak_cluster",
    "enclose",
    "evaluate_bias",
    "evaluate_mining",
    "generate_world",
    "iou",
    "load_bias",
    "load_dataset",
    "load_truth",
    "load_weights",
    "matching_loss",
    "merge_fragments",
    "mine_image",
    "pairwise_similarity",
    "parse_manifest",
    "random_weights",
    "read_mined_sets",
    "read_tensor",
    "save_bias",
    "score_labels",
    "score_matrix",
    "set_similarity",
    "similarity_entropy",
    "weighted_similarity",
    "write_mined_sets",
    "write_tensor",
]
