"""Episode rollouts under fixed-horizon and adaptive commitment, plus suite aggregation.

Each decision observes the true pose through Gaussian observation noise,
asks the strategy for a chunk and a commitment length, and executes that
prefix open loop against the true state. An episode ends on reaching the
goal, entering an obstacle, or exhausting the step budget.

Forward calls count batched policy invocations: one per decision for a
fixed horizon, two for the adaptive strategy (sampling plus verification).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..consensus import ClusterConfig
from ..policy import ChunkPolicy, CountingPolicy, sample_chunks
from ..trajectory import State
from ..verifier import AcceptanceThreshold, a3_decide
from .scenario import Scenario, Strategy, SuiteConfig, strategies_for
from .world import build_policy, inside

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "scenario",
    "strategy",
    "episodes",
    "failed_runs",
    "success_rate",
    "mean_horizon",
    "forward_calls",
    "total_steps",
    "collision_rate",
)


@dataclass
class EpisodeRecord:
    success: bool
    total_steps: int
    forward_calls: int
    committed_horizons: list[int]
    seed: int
    decided_horizons: list[int] = field(default_factory=list)
    in_precision: list[bool] = field(default_factory=list)
    outcome: str = "budget"
    final_pose: list[float] = field(default_factory=list)

    @property
    def decisions(self) -> int:
        return len(self.committed_horizons)


def a3_settings(scenario: Scenario, strategy: Strategy) -> tuple[ClusterConfig, AcceptanceThreshold]:
    threshold = AcceptanceThreshold(np.asarray(scenario.policy.delta) * strategy.delta_scale)
    # Clustering scales stay tied to the unscaled threshold so delta sweeps only move verification.
    cfg = ClusterConfig.from_threshold(scenario.policy.delta, scenario.horizon, strategy.tau)
    return cfg, threshold


def run_episode(scenario: Scenario, policy: ChunkPolicy, strategy: Strategy, seed: int | None = None) -> EpisodeRecord:
    seed = scenario.seed if seed is None else seed
    obs_ss, policy_ss = np.random.SeedSequence(seed).spawn(2)
    obs_rng = np.random.default_rng(obs_ss)
    policy_rng = np.random.default_rng(policy_ss)
    counter = CountingPolicy(policy)
    if strategy.kind == "a3":
        cluster_cfg, threshold = a3_settings(scenario, strategy)
    precision = [r for r, m in scenario.phase_map if m > 1.0]

    pose = scenario.start.copy()
    gripper = False
    goal = scenario.goal.pose
    record = EpisodeRecord(False, 0, 0, [], seed)
    if np.linalg.norm(pose - goal) < scenario.success_radius:
        record.success, record.outcome = True, "success"
        return record

    while record.total_steps < scenario.step_budget:
        observed = State(pose + obs_rng.normal(0.0, scenario.observation_noise, size=pose.shape), gripper)
        decision_seed = int(policy_rng.integers(2**63))
        if strategy.kind == "fixed":
            chunk = sample_chunks(counter, observed, 1, decision_seed)[0]
            length = min(strategy.l, chunk.horizon)
        else:
            chunk, _, outcome = a3_decide(counter, observed, strategy.k, strategy.w, cluster_cfg, threshold, decision_seed)
            length = outcome.horizon
        record.decided_horizons.append(length)
        record.in_precision.append(inside(precision, pose))

        executed = 0
        for j in range(length):
            pose = pose + chunk.deltas[j]
            gripper = bool(chunk.gripper[j])
            executed += 1
            record.total_steps += 1
            if inside(scenario.obstacles, pose):
                record.outcome = "collision"
                break
            if np.linalg.norm(pose - goal) < scenario.success_radius:
                record.success, record.outcome = True, "success"
                break
            if record.total_steps >= scenario.step_budget:
                break
        record.committed_horizons.append(executed)
        if record.outcome != "budget":
            break
    record.forward_calls = counter.calls
    record.final_pose = pose.tolist()
    return record


@dataclass
class CellSummary:
    scenario: str
    strategy: str
    episodes: int
    failed_runs: int
    success_rate: float
    mean_horizon: float
    forward_calls: float
    total_steps: float
    collision_rate: float
    errors: list[str] = field(default_factory=list)

    def row(self) -> list[str]:
        return [
            self.scenario,
            self.strategy,
            str(self.episodes),
            str(self.failed_runs),
            *(_fmt(getattr(self, c)) for c in CSV_COLUMNS[4:]),
        ]

    def to_dict(self) -> dict:
        return {c: getattr(self, c) for c in CSV_COLUMNS} | {"errors": self.errors}


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def summarize(scenario: str, strategy: str, records: Sequence[EpisodeRecord], errors: Sequence[str] = ()) -> CellSummary:
    """Aggregate in record order; the mean horizon is pooled per decision."""
    n = len(records)
    if n == 0:
        nan = float("nan")
        return CellSummary(scenario, strategy, 0, len(errors), nan, nan, nan, nan, nan, list(errors))
    decided = [h for r in records for h in r.decided_horizons]
    return CellSummary(
        scenario=scenario,
        strategy=strategy,
        episodes=n,
        failed_runs=len(errors),
        success_rate=sum(r.success for r in records) / n,
        mean_horizon=sum(decided) / len(decided) if decided else float("nan"),
        forward_calls=sum(r.forward_calls for r in records) / n,
        total_steps=sum(r.total_steps for r in records) / n,
        collision_rate=sum(r.outcome == "collision" for r in records) / n,
        errors=list(errors),
    )


_WORKER_POLICIES: dict = {}


def _episode_job(args) -> EpisodeRecord | str:
    scenario, strategy, seed = args
    key = id(scenario), scenario.name
    policy = _WORKER_POLICIES.get(key)
    if policy is None:
        policy = _WORKER_POLICIES[key] = build_policy(scenario)
    try:
        return run_episode(scenario, policy, strategy, seed)
    except Exception as exc:  # recorded per cell; the suite keeps going
        return f"seed {seed}: {type(exc).__name__}: {exc}"


def run_cell(scenario: Scenario, strategy: Strategy, seeds: Sequence[int], policy: ChunkPolicy | None = None, workers: int = 1):
    """Run one (scenario, strategy) cell; returns ``(records, errors)`` in seed order."""
    jobs = [(scenario, strategy, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_episode_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        policy = build_policy(scenario) if policy is None else policy
        results = []
        for sc, st, s in jobs:
            try:
                results.append(run_episode(sc, policy, st, s))
            except Exception as exc:
                results.append(f"seed {s}: {type(exc).__name__}: {exc}")
    records = [r for r in results if isinstance(r, EpisodeRecord)]
    errors = [r for r in results if isinstance(r, str)]
    for e in errors:
        log.error("episode failed: %s", e)
    return records, errors


@dataclass
class GridResult:
    best_l: int
    best_success: float
    cells: list[CellSummary]


def grid_search_fixed(scenario: Scenario, policy: ChunkPolicy | None, seeds: Sequence[int], workers: int = 1) -> GridResult:
    """Evaluate every fixed commitment ``1..H``; ties resolve to the smaller ``l``."""
    if not seeds:
        raise ValueError("grid search needs at least one seed")
    cells = []
    for l in range(1, scenario.horizon + 1):
        strategy = Strategy.fixed(l)
        records, errors = run_cell(scenario, strategy, seeds, policy, workers)
        cells.append(summarize(scenario.name, strategy.label, records, errors))
    best = max(range(len(cells)), key=lambda i: (cells[i].success_rate, -i))
    return GridResult(best + 1, cells[best].success_rate, cells)


def run_suite(config: SuiteConfig, workers: int = 1) -> list[CellSummary]:
    seeds = config.seeds()
    table = []
    for scenario in config.scenarios:
        policy = None if workers > 1 else build_policy(scenario)
        for strategy in strategies_for(config.strategies, scenario):
            records, errors = run_cell(scenario, strategy, seeds, policy, workers)
            table.append(summarize(scenario.name, strategy.label, records, errors))
    return table


def table_csv(table: Sequence[CellSummary]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for cell in table:
        writer.writerow(cell.row())
    return buf.getvalue()


def write_outputs(table: Sequence[CellSummary], out_dir: str | Path, config: SuiteConfig | None = None) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "metrics.csv"
    json_path = out / "summary.json"
    csv_path.write_text(table_csv(table))
    summary = {"cells": [c.to_dict() for c in table]}
    if config is not None:
        summary["seed"] = config.seed
        summary["episodes"] = config.episodes
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return csv_path, json_path


def precision_split(records: Sequence[EpisodeRecord]) -> tuple[list[float], list[float]]:
    """Per-episode mean decided horizon inside and outside precision regions.

    Only episodes with decisions in both regions contribute, so the two lists are paired.
    """
    inside_means, outside_means = [], []
    for r in records:
        h = np.asarray(r.decided_horizons, dtype=float)
        flags = np.asarray(r.in_precision, dtype=bool)
        if flags.any() and (~flags).any():
            inside_means.append(float(h[flags].mean()))
            outside_means.append(float(h[~flags].mean()))
    return inside_means, outside_means
