"""Dual prefix verification of a drafted chunk and the resulting commitment length.

Every step of the draft is re-decoded twice in one batched policy call:
once with all strictly higher-consensus steps clamped (invariance) and once
with all earlier steps clamped (sequential). A step passes a check when the
re-decoded deltas stay within the per-dimension threshold of the draft. The
committed horizon is the longest prefix passing both checks, with a one-step
fallback when the first step already fails.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .consensus import ClusterConfig, ConsensusReport, run_stage1
from .errors import InvalidInput, VerificationUnavailable
from .policy import ChunkPolicy, PolicyQuery, sample_chunks
from .trajectory import ActionChunk, State

log = logging.getLogger(__name__)

INVARIANCE = "invariance"
SEQUENTIAL = "sequential"


@dataclass(frozen=True, eq=False)
class VerifyContext:
    kind: str
    target: int
    fixed_positions: tuple[int, ...]
    fixed_values: np.ndarray

    def __post_init__(self):
        if self.kind not in (INVARIANCE, SEQUENTIAL):
            raise InvalidInput(f"unknown context kind {self.kind!r}")
        positions = tuple(sorted(int(p) for p in self.fixed_positions))
        if self.target in positions:
            raise InvalidInput(f"target {self.target} cannot also be a fixed position")
        if self.kind == SEQUENTIAL and positions != tuple(range(self.target)):
            raise InvalidInput(f"sequential context for step {self.target} must fix exactly the earlier steps")
        values = np.array(self.fixed_values, dtype=float).reshape(len(positions), -1) if positions else np.empty((0, 0))
        values.setflags(write=False)
        object.__setattr__(self, "fixed_positions", positions)
        object.__setattr__(self, "fixed_values", values)

    def value_at(self, position: int) -> np.ndarray:
        return self.fixed_values[self.fixed_positions.index(position)]


@dataclass(frozen=True)
class AcceptanceThreshold:
    per_dim: np.ndarray

    def __post_init__(self):
        per_dim = np.array(self.per_dim, dtype=float).reshape(-1)
        if per_dim.size == 0 or not np.all(np.isfinite(per_dim)) or np.any(per_dim <= 0):
            raise InvalidInput(f"thresholds must be positive and finite, got {per_dim.tolist()}")
        per_dim.setflags(write=False)
        object.__setattr__(self, "per_dim", per_dim)

    def scaled(self, factor: float) -> AcceptanceThreshold:
        return AcceptanceThreshold(self.per_dim * factor)


@dataclass(frozen=True, eq=False)
class VerificationOutcome:
    v_inv: np.ndarray
    v_seq: np.ndarray
    horizon: int
    fallback_used: bool

    def to_dict(self) -> dict:
        return {
            "v_inv": self.v_inv.tolist(),
            "v_seq": self.v_seq.tolist(),
            "horizon": self.horizon,
            "fallback_used": self.fallback_used,
        }


def build_tree(draft: ActionChunk, scores) -> list[VerifyContext]:
    """Invariance contexts for every step followed by sequential contexts for every step.

    The invariance context of step ``i`` clamps the steps whose score is
    strictly greater than ``scores[i]``; tied steps never clamp each other.
    """
    scores = np.asarray(scores, dtype=float).reshape(-1)
    if scores.shape[0] != draft.horizon:
        raise InvalidInput(f"{scores.shape[0]} scores for a draft of horizon {draft.horizon}")
    order = np.argsort(-scores, kind="stable")
    contexts = []
    for i in range(draft.horizon):
        fixed = sorted(int(j) for j in order if scores[j] > scores[i])
        contexts.append(VerifyContext(INVARIANCE, i, tuple(fixed), draft.deltas[fixed]))
    for i in range(draft.horizon):
        contexts.append(VerifyContext(SEQUENTIAL, i, tuple(range(i)), draft.deltas[:i]))
    return contexts


def _passes(redecoded: np.ndarray, draft: ActionChunk, targets: np.ndarray, threshold: AcceptanceThreshold) -> np.ndarray:
    dev = np.abs(redecoded - draft.deltas[targets])
    with np.errstate(invalid="ignore"):
        return np.all(dev < threshold.per_dim, axis=1)


def _collect(contexts: Sequence[VerifyContext], ok: np.ndarray, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    v = {INVARIANCE: np.zeros(horizon, dtype=bool), SEQUENTIAL: np.zeros(horizon, dtype=bool)}
    seen = {INVARIANCE: set(), SEQUENTIAL: set()}
    for ctx, passed in zip(contexts, ok):
        v[ctx.kind][ctx.target] = passed
        seen[ctx.kind].add(ctx.target)
    for kind, targets in seen.items():
        if len(targets) != horizon:
            raise InvalidInput(f"{kind} contexts cover {len(targets)} of {horizon} steps")
    return v[INVARIANCE], v[SEQUENTIAL]


def verify_batch(policy: ChunkPolicy, base: State, contexts: Sequence[VerifyContext], draft: ActionChunk, threshold: AcceptanceThreshold, seed=None):
    """Evaluate all contexts with exactly one policy call; returns ``(v_inv, v_seq)``."""
    if threshold.per_dim.shape[0] != draft.dim:
        raise InvalidInput(f"threshold has {threshold.per_dim.shape[0]} entries for {draft.dim} action dims")
    try:
        redecoded = policy.forward(PolicyQuery(base, contexts=tuple(contexts), seed=seed))
    except Exception as exc:
        raise VerificationUnavailable(f"batched re-decode failed: {exc}") from exc
    redecoded = np.asarray(redecoded, dtype=float)
    if redecoded.shape != (len(contexts), draft.dim):
        raise VerificationUnavailable(f"policy returned shape {redecoded.shape} for {len(contexts)} contexts")
    targets = np.array([c.target for c in contexts], dtype=int)
    return _collect(contexts, _passes(redecoded, draft, targets, threshold), draft.horizon)


def commit_horizon(v_inv, v_seq) -> tuple[int, bool]:
    v_inv = np.asarray(v_inv, dtype=bool)
    v_seq = np.asarray(v_seq, dtype=bool)
    if v_inv.shape != v_seq.shape or v_inv.ndim != 1 or v_inv.size == 0:
        raise InvalidInput("verdict vectors must be non-empty and of equal length")
    ok = v_inv & v_seq
    if not ok[0]:
        return 1, True
    failed = np.flatnonzero(~ok)
    return (int(failed[0]) if failed.size else ok.size), False


def a3_decide(
    policy: ChunkPolicy,
    base: State,
    k: int,
    w: int,
    cluster_config: ClusterConfig,
    threshold: AcceptanceThreshold,
    seed=None,
) -> tuple[ActionChunk, ConsensusReport, VerificationOutcome]:
    """Sample, score, verify and commit: two policy calls in total."""
    if k < 1:
        raise InvalidInput(f"need at least one sample, got k={k}")
    sample_seed, verify_seed = np.random.SeedSequence(seed).spawn(2)
    chunks = sample_chunks(policy, base, k, sample_seed)
    report = run_stage1(base, chunks, w, cluster_config)
    contexts = build_tree(report.draft, report.scores)
    try:
        v_inv, v_seq = verify_batch(policy, base, contexts, report.draft, threshold, int(verify_seed.generate_state(1)[0]))
    except VerificationUnavailable as exc:
        log.warning("verification unavailable, committing one step: %s", exc)
        none = np.zeros(report.draft.horizon, dtype=bool)
        return report.draft, report, VerificationOutcome(none, none.copy(), 1, True)
    horizon, fallback = commit_horizon(v_inv, v_seq)
    return report.draft, report, VerificationOutcome(v_inv, v_seq, horizon, fallback)
