"""Adaptive action acceptance for chunked sequence policies."""

from .consensus import ClusterConfig, ConsensusReport, cluster, consensus_scores, run_stage1, score_cluster, select_medoid
from .errors import ConditioningError, InsufficientData, InvalidInput, VerificationUnavailable
from .policy import (
    ChunkPolicy,
    CountingPolicy,
    GaussianChunkPolicy,
    MixturePolicy,
    PolicyQuery,
    ar1_covariance,
    brute_force_conditional,
    redecode,
    sample_chunks,
)
from .trajectory import Action, ActionChunk, State, Trajectory, integrate, step_distance, trajectory_distance
from .verifier import (
    AcceptanceThreshold,
    VerificationOutcome,
    VerifyContext,
    a3_decide,
    build_tree,
    commit_horizon,
    verify_batch,
)

__all__ = [
    "AcceptanceThreshold",
    "Action",
    "ActionChunk",
    "ChunkPolicy",
    "ClusterConfig",
    "ConditioningError",
    "ConsensusReport",
    "CountingPolicy",
    "GaussianChunkPolicy",
    "InsufficientData",
    "InvalidInput",
    "MixturePolicy",
    "PolicyQuery",
    "State",
    "Trajectory",
    "VerificationOutcome",
    "VerificationUnavailable",
    "VerifyContext",
    "a3_decide",
    "ar1_covariance",
    "brute_force_conditional",
    "build_tree",
    "cluster",
    "commit_horizon",
    "consensus_scores",
    "integrate",
    "redecode",
    "run_stage1",
    "sample_chunks",
    "score_cluster",
    "select_medoid",
    "step_distance",
    "trajectory_distance",
    "verify_batch",
]
