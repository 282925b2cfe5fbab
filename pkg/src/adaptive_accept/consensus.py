"""Mode-aware trajectory consensus: clustering, dominant mode, medoid draft, per-step scores."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInput
from .trajectory import ActionChunk, State, distance_matrix, integrate, pairwise_step_distances


@dataclass(frozen=True)
class ClusterConfig:
    """Geometric scales for stage one.

    ``tau`` tempers the compactness penalty in the cluster score,
    ``cluster_cutoff`` stops average-linkage merging, and ``consensus_scale``
    divides the mean medoid distance inside the per-step score exponential.
    """

    tau: float
    cluster_cutoff: float
    consensus_scale: float

    def __post_init__(self):
        for name in ("tau", "cluster_cutoff", "consensus_scale"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidInput(f"{name} must be a positive finite number, got {value!r}")

    @classmethod
    def from_threshold(cls, per_dim, horizon: int, tau: float | None = None) -> ClusterConfig:
        """Derive default scales from the per-dimension acceptance threshold.

        The cutoff allows a tolerance ball of radius ``j * delta`` at step ``j``
        (per-action tolerances accumulate along the integrated trajectory).
        """
        ball = float(np.sum(np.square(np.asarray(per_dim, dtype=float))))
        cutoff = ball * sum(j * j for j in range(1, horizon + 1))
        return cls(tau=cutoff if tau is None else tau, cluster_cutoff=cutoff, consensus_scale=ball)


@dataclass(frozen=True, eq=False)
class ConsensusReport:
    assignments: np.ndarray
    dominant: int
    medoid: int
    draft: ActionChunk
    scores: np.ndarray
    cluster_scores: np.ndarray
    distances: np.ndarray

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster_id)

    def to_dict(self) -> dict:
        return {
            "assignments": self.assignments.tolist(),
            "dominant": self.dominant,
            "medoid": self.medoid,
            "cluster_scores": self.cluster_scores.tolist(),
            "scores": self.scores.tolist(),
            "draft": {"deltas": self.draft.deltas.tolist(), "gripper": self.draft.gripper.tolist()},
        }


def _check_distance_matrix(distances) -> np.ndarray:
    d = np.asarray(distances, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] == 0:
        raise InvalidInput(f"distance matrix must be square and non-empty, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise InvalidInput("distance matrix contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(d))))
    if np.max(np.abs(d - d.T)) > 1e-12 * scale:
        raise InvalidInput("distance matrix is not symmetric")
    if np.max(np.abs(np.diag(d))) > 1e-12 * scale:
        raise InvalidInput("distance matrix must have a zero diagonal")
    if np.min(d) < 0:
        raise InvalidInput("distance matrix has negative entries")
    return d


def _average_linkage(d: np.ndarray, a: list[int], b: list[int]) -> float:
    return float(d[np.ix_(a, b)].sum() / (len(a) * len(b)))


def cluster(distances, config: ClusterConfig) -> np.ndarray:
    """Average-linkage agglomerative clustering with a distance cutoff.

    Merges the closest pair of clusters while their average linkage is at most
    ``config.cluster_cutoff``. Ties go to the lexicographically lowest pair,
    where clusters are ordered by their smallest member. Cluster ids in the
    returned assignment vector follow the same ordering.
    """
    d = _check_distance_matrix(distances)
    groups = [[k] for k in range(d.shape[0])]
    while len(groups) > 1:
        best, pair = math.inf, None
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                link = _average_linkage(d, groups[i], groups[j])
                if link < best:
                    best, pair = link, (i, j)
        if best > config.cluster_cutoff:
            break
        i, j = pair
        groups[i] = sorted(groups[i] + groups[j])
        del groups[j]
    groups.sort(key=lambda g: g[0])
    assignments = np.empty(d.shape[0], dtype=int)
    for cid, members in enumerate(groups):
        assignments[members] = cid
    return assignments


def dispersion(members: Sequence[int], distances) -> float:
    """Mean pairwise distance inside a cluster; zero for a singleton."""
    members = sorted(int(m) for m in members)
    if len(members) < 2:
        return 0.0
    d = np.asarray(distances, dtype=float)
    sub = d[np.ix_(members, members)]
    iu = np.triu_indices(len(members), k=1)
    return float(sub[iu].mean())


def score_cluster(members: Sequence[int], total: int, distances, tau: float) -> float:
    """Mass times compactness: ``|c|/K * exp(-Disp(c)/tau)``."""
    if len(members) == 0:
        raise InvalidInput("cannot score an empty cluster")
    if total < len(members):
        raise InvalidInput(f"cluster of size {len(members)} exceeds sample count {total}")
    if tau <= 0:
        raise InvalidInput(f"tau must be positive, got {tau}")
    return len(members) / total * math.exp(-dispersion(members, distances) / tau)


def select_medoid(members: Sequence[int], distances) -> int:
    members = sorted(int(m) for m in members)
    if not members:
        raise InvalidInput("cannot select the medoid of an empty cluster")
    d = np.asarray(distances, dtype=float)
    sums = d[np.ix_(members, members)].sum(axis=1)
    # sums that differ only by summation-order rounding count as ties
    best = sums.min()
    tied = np.flatnonzero(sums <= best + 1e-12 * max(abs(best), 1e-300))
    return members[int(tied[0])]


def consensus_scores(dominant: Sequence[int], medoid: int, step_distances, total: int, scale: float) -> np.ndarray:
    """Per-step consensus ``p * exp(-mean_k d_j(k, medoid) / scale)`` over the dominant cluster.

    Args:
        dominant: sample indices of the dominant cluster.
        medoid: index of the medoid; must belong to ``dominant``.
        step_distances: ``(K, H)`` time-aligned distances from each sample to the medoid.
        total: number of samples K.
        scale: length scale dividing the mean distance.
    """
    dominant = sorted(int(m) for m in dominant)
    if medoid not in dominant:
        raise InvalidInput(f"medoid {medoid} is not a member of the dominant cluster")
    if scale <= 0:
        raise InvalidInput(f"consensus scale must be positive, got {scale}")
    sd = np.array(step_distances, dtype=float)
    sd[medoid] = 0.0
    mean = sd[dominant].sum(axis=0) / len(dominant)
    return len(dominant) / total * np.exp(-mean / scale)


def run_stage1(base: State, chunks: Sequence[ActionChunk], w: int, config: ClusterConfig) -> ConsensusReport:
    if len(chunks) == 0:
        raise InvalidInput("stage one needs at least one chunk")
    shapes = {c.deltas.shape for c in chunks}
    if len(shapes) != 1:
        raise InvalidInput(f"chunks disagree in shape: {sorted(shapes)}")
    total = len(chunks)
    poses = np.stack([integrate(base, c).poses for c in chunks])
    step_d = pairwise_step_distances(poses, w)
    dist = distance_matrix(step_d)

    assignments = cluster(dist, config)
    n_clusters = int(assignments.max()) + 1
    s = np.array(
        [score_cluster(np.flatnonzero(assignments == c), total, dist, config.tau) for c in range(n_clusters)]
    )
    dominant = int(np.argmax(s))
    members = np.flatnonzero(assignments == dominant)
    medoid = select_medoid(members, dist)
    scores = consensus_scores(members, medoid, step_d[:, medoid, :], total, config.consensus_scale)
    return ConsensusReport(
        assignments=assignments,
        dominant=dominant,
        medoid=medoid,
        draft=chunks[medoid],
        scores=scores,
        cluster_scores=s,
        distances=dist,
    )
