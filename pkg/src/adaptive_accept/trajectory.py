"""Actions, states, kinematic integration and time-aligned trajectory distances.

Poses are treated as translations: a trajectory is the running sum of the
chunk's continuous deltas starting from a base pose. The gripper channel is
carried along with latest-value semantics and never enters a distance.

Step indices are zero-based throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInput


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise InvalidInput(f"{name} must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} must be finite")
    return _frozen(arr)


@dataclass(frozen=True, eq=False)
class Action:
    deltas: np.ndarray
    gripper: bool = False

    def __post_init__(self):
        object.__setattr__(self, "deltas", _as_vector(self.deltas, "deltas"))
        object.__setattr__(self, "gripper", bool(self.gripper))

    @property
    def dim(self) -> int:
        return self.deltas.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Action):
            return NotImplemented
        return self.gripper == other.gripper and np.array_equal(self.deltas, other.deltas)


@dataclass(frozen=True, eq=False)
class State:
    pose: np.ndarray
    gripper: bool = False

    def __post_init__(self):
        object.__setattr__(self, "pose", _as_vector(self.pose, "pose"))
        object.__setattr__(self, "gripper", bool(self.gripper))

    @property
    def dim(self) -> int:
        return self.pose.shape[0]

    def __eq__(self, other):
        if not isinstance(other, State):
            return NotImplemented
        return self.gripper == other.gripper and np.array_equal(self.pose, other.pose)


@dataclass(frozen=True, eq=False)
class ActionChunk:
    """H consecutive actions stored as an ``(H, d)`` delta matrix plus ``(H,)`` gripper flags."""

    deltas: np.ndarray
    gripper: np.ndarray | None = None

    def __post_init__(self):
        deltas = np.array(self.deltas, dtype=float)
        if deltas.ndim == 1:
            deltas = deltas[:, None]
        if deltas.ndim != 2 or deltas.shape[0] == 0 or deltas.shape[1] == 0:
            raise InvalidInput(f"chunk deltas must be a non-empty (H, d) matrix, got shape {deltas.shape}")
        if not np.all(np.isfinite(deltas)):
            raise InvalidInput("chunk deltas must be finite")
        if self.gripper is None:
            gripper = np.zeros(deltas.shape[0], dtype=bool)
        else:
            gripper = np.array(self.gripper, dtype=bool).reshape(-1)
        if gripper.shape[0] != deltas.shape[0]:
            raise InvalidInput(f"gripper has {gripper.shape[0]} flags for a chunk of horizon {deltas.shape[0]}")
        object.__setattr__(self, "deltas", _frozen(deltas))
        object.__setattr__(self, "gripper", _frozen(gripper))

    @classmethod
    def from_actions(cls, actions: Sequence[Action]) -> ActionChunk:
        if not actions:
            raise InvalidInput("a chunk needs at least one action")
        dims = {a.dim for a in actions}
        if len(dims) != 1:
            raise InvalidInput(f"actions disagree on dimensionality: {sorted(dims)}")
        return cls(np.stack([a.deltas for a in actions]), np.array([a.gripper for a in actions]))

    @property
    def horizon(self) -> int:
        return self.deltas.shape[0]

    @property
    def dim(self) -> int:
        return self.deltas.shape[1]

    @property
    def actions(self) -> tuple[Action, ...]:
        return tuple(Action(self.deltas[j], self.gripper[j]) for j in range(self.horizon))

    def __getitem__(self, j: int) -> Action:
        return Action(self.deltas[j], self.gripper[j])

    def __len__(self) -> int:
        return self.horizon

    def prefix(self, length: int) -> ActionChunk:
        if not 1 <= length <= self.horizon:
            raise InvalidInput(f"prefix length {length} outside [1, {self.horizon}]")
        return ActionChunk(self.deltas[:length], self.gripper[:length])

    def __eq__(self, other):
        if not isinstance(other, ActionChunk):
            return NotImplemented
        return np.array_equal(self.deltas, other.deltas) and np.array_equal(self.gripper, other.gripper)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Induced states of a chunk: ``poses[j]`` is the pose after executing actions ``0..j``."""

    poses: np.ndarray
    gripper: np.ndarray
    base: State

    @property
    def horizon(self) -> int:
        return self.poses.shape[0]

    @property
    def states(self) -> tuple[State, ...]:
        return tuple(State(self.poses[j], self.gripper[j]) for j in range(self.horizon))


def integrate(base: State, chunk: ActionChunk) -> Trajectory:
    if chunk.dim != base.dim:
        raise InvalidInput(f"chunk has {chunk.dim} continuous dims but base state has {base.dim}")
    poses = base.pose + np.cumsum(chunk.deltas, axis=0)
    return Trajectory(_frozen(poses), chunk.gripper, base)


def _check_window(w: int, horizon: int) -> None:
    if isinstance(w, bool) or int(w) != w or w < 0:
        raise InvalidInput(f"alignment window must be a non-negative integer, got {w!r}")
    if w >= horizon:
        raise InvalidInput(f"alignment window {w} must be smaller than the horizon {horizon}")


def _shift_mask(horizon: int, w: int) -> np.ndarray:
    idx = np.arange(horizon)
    return np.abs(idx[:, None] - idx[None, :]) <= w


def aligned_step_distances(poses_a: np.ndarray, poses_b: np.ndarray, w: int) -> np.ndarray:
    """Per-step ``min_{|s|<=w} ||a[j] - b[j+s]||^2`` with out-of-range shifts skipped.

    The shift is applied to the second argument only, so the result is not
    symmetric in general.
    """
    poses_a = np.asarray(poses_a, dtype=float)
    poses_b = np.asarray(poses_b, dtype=float)
    if poses_a.shape != poses_b.shape:
        raise InvalidInput(f"pose arrays differ in shape: {poses_a.shape} vs {poses_b.shape}")
    horizon = poses_a.shape[0]
    _check_window(w, horizon)
    diff = poses_a[:, None, :] - poses_b[None, :, :]
    cross = np.einsum("ijd,ijd->ij", diff, diff)
    cross = np.where(_shift_mask(horizon, w), cross, np.inf)
    return cross.min(axis=1)


def pairwise_step_distances(poses: np.ndarray, w: int) -> np.ndarray:
    """All-pairs version of :func:`aligned_step_distances`.

    Args:
        poses: ``(K, H, d)`` stacked trajectory poses.
        w: alignment window.

    Returns:
        ``(K, K, H)`` array ``out[k, m, j] = min_s ||poses[k, j] - poses[m, j+s]||^2``.
    """
    poses = np.asarray(poses, dtype=float)
    if poses.ndim != 3:
        raise InvalidInput(f"expected (K, H, d) poses, got shape {poses.shape}")
    horizon = poses.shape[1]
    _check_window(w, horizon)
    diff = poses[:, None, :, None, :] - poses[None, :, None, :, :]
    cross = np.einsum("kmijd,kmijd->kmij", diff, diff)
    cross = np.where(_shift_mask(horizon, w), cross, np.inf)
    return cross.min(axis=3)


def step_distance(ta: Trajectory, tb: Trajectory, j: int, w: int) -> float:
    if ta.horizon != tb.horizon:
        raise InvalidInput(f"horizon mismatch: {ta.horizon} vs {tb.horizon}")
    if not 0 <= j < ta.horizon:
        raise InvalidInput(f"step index {j} outside [0, {ta.horizon})")
    _check_window(w, ta.horizon)
    lo, hi = max(0, j - w), min(ta.horizon, j + w + 1)
    diff = tb.poses[lo:hi] - ta.poses[j]
    return float(np.min(np.einsum("sd,sd->s", diff, diff)))


def directed_distance(ta: Trajectory, tb: Trajectory, w: int) -> float:
    """Sum over steps of :func:`step_distance` with the shift applied to ``tb``."""
    if ta.horizon != tb.horizon:
        raise InvalidInput(f"horizon mismatch: {ta.horizon} vs {tb.horizon}")
    return float(aligned_step_distances(ta.poses, tb.poses, w).sum())


def trajectory_distance(ta: Trajectory, tb: Trajectory, w: int) -> float:
    """Symmetrised aggregate distance ``(D(a, b) + D(b, a)) / 2``."""
    return 0.5 * (directed_distance(ta, tb, w) + directed_distance(tb, ta, w))


def distance_matrix(step_dists: np.ndarray) -> np.ndarray:
    """Collapse ``(K, K, H)`` directed step distances into a symmetric ``(K, K)`` matrix."""
    directed = step_dists.sum(axis=2)
    return 0.5 * (directed + directed.T)
