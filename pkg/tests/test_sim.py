import csv
import io
import json
import math

import numpy as np
import pytest

from adaptive_accept import ChunkPolicy
from adaptive_accept.sim import (
    Ball,
    ConfigError,
    PolicyParams,
    Scenario,
    Strategy,
    build_policy,
    grid_search_fixed,
    load_config,
    parse_config,
    run_episode,
    run_suite,
)
from adaptive_accept.sim import cli
from adaptive_accept.sim.harness import CSV_COLUMNS, EpisodeRecord, precision_split, run_cell, summarize, table_csv
from adaptive_accept.sim.scenario import default_config_path

STRAIGHT = Scenario(
    name="straight",
    obstacles=(),
    phase_map=(),
    policy=PolicyParams(sigma0=0.0, routes=((),)),
)

TINY = """
seed: 3
episodes: 4
scenarios:
  - name: small
    H: 4
    step_budget: 30
strategies:
  - {kind: fixed, l: [1, 4]}
  - {kind: a3, K: 4}
"""


def check_accounting(record, strategy):
    assert sum(record.committed_horizons) == record.total_steps
    per = 1 if strategy.kind == "fixed" else 2
    assert record.forward_calls == per * record.decisions
    assert len(record.decided_horizons) == len(record.in_precision) == record.decisions
    assert all(1 <= c <= d for c, d in zip(record.committed_horizons, record.decided_horizons))


def test_zero_noise_full_horizon_reaches_goal():
    policy = build_policy(STRAIGHT)
    record = run_episode(STRAIGHT, policy, Strategy.fixed(10), seed=0)
    distance = np.linalg.norm(STRAIGHT.goal.pose - STRAIGHT.start)
    decisions = math.ceil(distance / STRAIGHT.policy.speed / STRAIGHT.horizon)
    assert record.success and record.outcome == "success"
    assert record.decisions == decisions == record.forward_calls
    assert record.total_steps == 20
    check_accounting(record, Strategy.fixed(10))


def test_zero_noise_a3_commits_full_horizon():
    record = run_episode(STRAIGHT, build_policy(STRAIGHT), Strategy.a3(), seed=0)
    assert record.success
    assert record.decided_horizons == [10, 10]
    assert record.forward_calls == 4


def test_start_inside_goal_is_immediate_success():
    sc = Scenario(start=[10.0, 0.1], obstacles=(), phase_map=())
    record = run_episode(sc, build_policy(sc), Strategy.fixed(1), seed=0)
    assert record.success and record.total_steps == 0 and record.forward_calls == 0


@pytest.mark.parametrize("strategy", [Strategy.fixed(1), Strategy.fixed(3), Strategy.fixed(10), Strategy.a3()])
def test_accounting_identities(strategy):
    sc = Scenario(observation_noise=0.04)
    policy = build_policy(sc)
    for seed in range(6):
        check_accounting(run_episode(sc, policy, strategy, seed=seed), strategy)


def test_budget_exhaustion_is_failure():
    sc = Scenario(obstacles=(), phase_map=(), step_budget=10, policy=PolicyParams(sigma0=0.0, routes=((),)))
    record = run_episode(sc, build_policy(sc), Strategy.fixed(3), seed=0)
    assert not record.success and record.outcome == "budget"
    assert record.total_steps == 10
    assert record.committed_horizons == [3, 3, 3, 1]


def test_collision_ends_episode():
    sc = Scenario(obstacles=(Ball([3.0, 0.0], 0.5),), phase_map=(), policy=PolicyParams(sigma0=0.0, routes=((),)))
    record = run_episode(sc, build_policy(sc), Strategy.fixed(10), seed=0)
    assert record.outcome == "collision" and not record.success
    assert record.total_steps == 6  # first pose inside the ball is x=3.0 - 0.5 + 0.5


def test_episode_is_seed_deterministic():
    sc = Scenario(observation_noise=0.04)
    policy = build_policy(sc)
    a = run_episode(sc, policy, Strategy.a3(), seed=5)
    b = run_episode(sc, build_policy(sc), Strategy.a3(), seed=5)
    assert a == b
    c = run_episode(sc, policy, Strategy.a3(), seed=6)
    assert a.final_pose != c.final_pose


def test_grid_zero_noise_prefers_smallest():
    result = grid_search_fixed(STRAIGHT, None, [0, 1, 2])
    assert (result.best_l, result.best_success) == (1, 1.0)
    assert [c.strategy for c in result.cells] == [f"fixed(l={l})" for l in range(1, 11)]
    with pytest.raises(ValueError):
        grid_search_fixed(STRAIGHT, None, [])


def test_forward_calls_fall_with_commitment():
    sc = Scenario()
    policy = build_policy(sc)
    calls = []
    for l in range(1, sc.horizon + 1):
        records, errors = run_cell(sc, Strategy.fixed(l), range(20), policy)
        assert not errors
        calls.append(summarize(sc.name, "x", records).forward_calls)
    assert all(b <= a for a, b in zip(calls, calls[1:]))


def test_suite_without_strategies_is_empty(tmp_path):
    config = parse_config("episodes: 2\nscenarios:\n  - {name: a}\n")
    assert run_suite(config) == []
    assert table_csv([]) == ",".join(CSV_COLUMNS) + "\n"
    path = tmp_path / "empty.yaml"
    path.write_text("episodes: 2\n")
    assert cli.main(["--config", str(path), "--out-dir", str(tmp_path / "out"), "run"]) == 0
    assert (tmp_path / "out" / "metrics.csv").read_text() == ",".join(CSV_COLUMNS) + "\n"


class FlakyPolicy(ChunkPolicy):
    def __init__(self, inner, bad_x):
        self.inner, self.bad_x = inner, bad_x
        self.horizon, self.dim = inner.horizon, inner.dim

    def sample_array(self, base, k, rng):
        if base.pose[0] > self.bad_x:
            raise RuntimeError("sensor dropout")
        return self.inner.sample_array(base, k, rng)

    def redecode_one(self, base, context, seed=None):
        return self.inner.redecode_one(base, context, seed)

    def gripper_at(self, base, step):
        return self.inner.gripper_at(base, step)


def test_partial_failures_are_recorded():
    sc = Scenario(observation_noise=0.04)
    flaky = FlakyPolicy(build_policy(sc), bad_x=0.1)
    records, errors = run_cell(sc, Strategy.fixed(2), [0, 1, 2], flaky)
    assert len(errors) == 3 and not records
    assert all("sensor dropout" in e for e in errors)
    cell = summarize(sc.name, "fixed(l=2)", records, errors)
    assert cell.failed_runs == 3 and cell.episodes == 0 and math.isnan(cell.success_rate)


def test_summary_pools_horizon_per_decision():
    recs = [
        EpisodeRecord(True, 3, 2, [1, 2], 0, decided_horizons=[1, 2]),
        EpisodeRecord(False, 6, 1, [6], 1, decided_horizons=[6], outcome="collision"),
    ]
    cell = summarize("s", "t", recs)
    assert cell.mean_horizon == pytest.approx(3.0)
    assert (cell.success_rate, cell.collision_rate, cell.forward_calls, cell.total_steps) == (0.5, 0.5, 1.5, 4.5)
    assert cell.row()[4:6] == ["0.500000", "3.000000"]


def test_precision_split_pairs_episodes():
    recs = [
        EpisodeRecord(True, 0, 0, [], 0, decided_horizons=[6, 4, 2, 2], in_precision=[False, False, True, True]),
        EpisodeRecord(True, 0, 0, [], 1, decided_horizons=[5], in_precision=[False]),
    ]
    assert precision_split(recs) == ([2.0], [5.0])


def test_default_config_matches_defaults():
    config = load_config(default_config_path())
    assert config.episodes == 500 and config.seed == 0
    assert config.scenarios[0].to_dict() == Scenario().to_dict()


def test_sweep_expands_variants():
    config = parse_config("scenarios:\n  - name: s\n    sweep:\n      observation_noise: [0.0, 0.1]\n")
    assert [s.name for s in config.scenarios] == ["s[observation_noise=0.0]", "s[observation_noise=0.1]"]
    assert [s.observation_noise for s in config.scenarios] == [0.0, 0.1]


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("episodes: 5\nbogus: 1\n", "line 2"),
        ("scenarios:\n  - name: a\n    success_radius: -1\n", "success_radius"),
        ("scenarios:\n  - name: a\n    obstacles:\n      - {center: [1, 2], radius: 0}\n", "line 4"),
        ("scenarios:\n  - name: a\n    H: 10\n    step_budget: 5\n", "step_budget"),
        ("strategies:\n  - {kind: magic}\n", "kind"),
        ("scenarios:\n  - name: a\n    policy:\n      rho: fast\n", "line 4"),
        ("episodes: [1\n", "malformed"),
        ("episodes: 0\n", "positive"),
        ("scenarios:\n  - {name: a}\n  - {name: a}\n", "duplicate"),
    ],
)
def test_config_errors_are_located(text, fragment):
    with pytest.raises(ConfigError, match=fragment.replace("[", r"\[")):
        parse_config(text)


def test_fixed_horizon_beyond_scenario_rejected(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("scenarios:\n  - {name: a, H: 4}\nstrategies:\n  - {kind: fixed, l: 5}\n")
    assert cli.main(["--config", str(path), "--out-dir", str(tmp_path), "run"]) == 1


def test_cli_run_writes_outputs(tmp_path, capsys):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    out = tmp_path / "out"
    assert cli.main(["--config", str(path), "--out-dir", str(out), "run"]) == 0
    printed = capsys.readouterr().out
    csv_text = (out / "metrics.csv").read_text()
    assert printed == csv_text
    rows = list(csv.reader(io.StringIO(csv_text)))
    assert rows[0] == list(CSV_COLUMNS)
    assert [r[1] for r in rows[1:]] == ["fixed(l=1)", "fixed(l=4)", "a3(K=4,w=1)"]
    assert all(r[2] == "4" and r[3] == "0" for r in rows[1:])
    summary = json.loads((out / "summary.json").read_text())
    assert summary["episodes"] == 4 and len(summary["cells"]) == 3
    assert {"success_rate", "mean_horizon", "forward_calls", "total_steps"} <= set(summary["cells"][0])


def test_cli_overrides_and_grid(tmp_path, capsys):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    assert cli.main(["--config", str(path), "--out-dir", str(tmp_path), "--episodes", "2", "--seed", "9", "grid"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    result = json.loads(out[-1])
    assert result["scenario"] == "small" and 1 <= result["best_l"] <= 4
    assert len(out) == 1 + 1 + 4
    assert json.loads((tmp_path / "summary.json").read_text())["seed"] == 9


def test_cli_decide_dumps_reports(capsys):
    assert cli.main(["--episodes", "1", "decide", "--K", "4"]) == 0
    dump = json.loads(capsys.readouterr().out)
    assert len(dump["consensus"]["assignments"]) == 4
    assert 1 <= dump["verification"]["horizon"] <= 10


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    assert cli.main(["--config", str(tmp_path / "missing.yaml"), "run"]) == 1
    assert "config error" in capsys.readouterr().err
    assert cli.main(["--episodes", "1", "decide", "--scenario", "nope"]) == 1

    def boom(*_a, **_k):
        raise RuntimeError("disk full")

    monkeypatch.setattr(cli, "run_suite", boom)
    assert cli.main(["--out-dir", str(tmp_path), "run"]) == 2
    assert "disk full" in capsys.readouterr().err


def test_parallel_workers_match_serial():
    config = parse_config(TINY)
    serial = table_csv(run_suite(config, workers=1))
    parallel = table_csv(run_suite(config, workers=2))
    assert serial == parallel
