"""Kinematic point world: ball obstacles, precision regions, and route-following policies.

The reference policy is a mixture with one component per route. Each component
pure-pursues its route polyline at constant speed; the mixture gate prefers
routes the current pose is close to, so it is ambiguous wherever several
routes are equally near.
"""

from __future__ import annotations

import math
from statistics import NormalDist

import numpy as np

from ..policy import GaussianChunkPolicy, MixturePolicy, ar1_covariance
from ..trajectory import State
from .scenario import Ball, Scenario


def sigma_for_pass_rate(delta, rate: float = 0.9) -> float:
    """Per-step standard deviation at which an unconditional draw passes ``delta`` on every dim with probability ``rate``.

    Uses the smallest threshold entry so every dimension passes at least at the target rate.
    """
    delta = np.asarray(delta, dtype=float)
    per_dim = rate ** (1.0 / delta.size)
    return float(delta.min() / NormalDist().inv_cdf(0.5 + per_dim / 2))


def inside(balls, pose: np.ndarray) -> bool:
    return any(float(np.sum((pose - b.center) ** 2)) < b.radius**2 for b in balls)


def phase_multiplier(scenario: Scenario, pose: np.ndarray) -> float:
    mult = 1.0
    for region, factor in scenario.phase_map:
        if float(np.sum((pose - region.center) ** 2)) < region.radius**2:
            mult = max(mult, factor)
    return mult


class Route:
    """Polyline from the scenario start to the goal, followed by pure pursuit."""

    def __init__(self, points: np.ndarray, speed: float, lookahead: float):
        self.points = np.asarray(points, dtype=float)
        seg = np.diff(self.points, axis=0)
        self.seg = seg
        self.seg_len = np.linalg.norm(seg, axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.speed = speed
        self.lookahead = lookahead
        self._last: tuple[bytes, int, np.ndarray] | None = None

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def project(self, pose: np.ndarray) -> tuple[float, float]:
        """Arc length of the closest route point and the distance to it."""
        rel = pose - self.points[:-1]
        t = np.clip(np.einsum("sd,sd->s", rel, self.seg) / np.maximum(self.seg_len**2, 1e-12), 0.0, 1.0)
        closest = self.points[:-1] + t[:, None] * self.seg
        dist = np.linalg.norm(pose - closest, axis=1)
        s = int(np.argmin(dist))
        return float(self.cum[s] + t[s] * self.seg_len[s]), float(dist[s])

    def point_at(self, arc: float) -> np.ndarray:
        if arc >= self.length:
            return self.points[-1]
        s = int(np.searchsorted(self.cum, arc, side="right") - 1)
        t = (arc - self.cum[s]) / self.seg_len[s]
        return self.points[s] + t * self.seg[s]

    def plan(self, start: np.ndarray, horizon: int) -> np.ndarray:
        key = np.asarray(start, dtype=float).tobytes()
        if self._last is not None and self._last[0] == key and self._last[1] == horizon:
            return self._last[2]
        deltas = self._pursue(start, horizon)
        deltas.setflags(write=False)
        self._last = (key, horizon, deltas)
        return deltas

    def _pursue(self, start: np.ndarray, horizon: int) -> np.ndarray:
        goal = self.points[-1]
        pose = np.array(start, dtype=float)
        deltas = np.empty((horizon, pose.size))
        for j in range(horizon):
            arc, _ = self.project(pose)
            target = self.point_at(arc + self.lookahead)
            to_goal = goal - pose
            if np.linalg.norm(to_goal) <= self.speed:
                step = to_goal
            else:
                heading = target - pose
                norm = np.linalg.norm(heading)
                step = heading / norm * self.speed if norm > 1e-12 else np.zeros_like(pose)
            deltas[j] = step
            pose = pose + step
        return deltas


def build_routes(scenario: Scenario) -> list[Route]:
    p = scenario.policy
    routes = []
    for waypoints in p.routes:
        pts = [scenario.start, *[np.asarray(w, dtype=float) for w in waypoints], scenario.goal.pose]
        routes.append(Route(np.stack(pts), p.speed, p.lookahead))
    return routes


def build_policy(scenario: Scenario):
    """Construct the reference mixture policy described by ``scenario.policy``."""
    p = scenario.policy
    horizon, dim = scenario.horizon, scenario.d_c
    sigma0 = p.sigma0 if p.sigma0 is not None else sigma_for_pass_rate(p.delta, p.pass_rate)
    cov = ar1_covariance(horizon, dim, sigma0, p.rho, p.growth)
    goal = scenario.goal.pose
    radius = scenario.success_radius
    obs_inflation = 1.0 + p.noise_gain * scenario.observation_noise

    def noise_scale(state: State) -> float:
        return phase_multiplier(scenario, state.pose) * obs_inflation

    def make_component(route: Route) -> GaussianChunkPolicy:
        def mean_plan(state: State) -> np.ndarray:
            return route.plan(state.pose, horizon)

        def gripper_plan(state: State) -> np.ndarray:
            poses = state.pose + np.cumsum(route.plan(state.pose, horizon), axis=0)
            return np.linalg.norm(poses - goal, axis=1) < radius

        return GaussianChunkPolicy(mean_plan, cov, dim, gripper_plan=gripper_plan, noise_scale=noise_scale)

    routes = build_routes(scenario)
    components = [make_component(r) for r in routes]
    n = len(routes)
    if n == 1:
        return MixturePolicy([(1.0, components[0])])

    def gate(state: State) -> np.ndarray:
        dist = np.array([r.project(state.pose)[1] for r in routes])
        logits = -(dist - dist.min()) / p.gate_softness
        w = np.exp(logits)
        w = np.maximum(w / w.sum(), 1e-12)
        return w / w.sum()

    return MixturePolicy([(1.0 / n, c) for c in components], gate=gate)
