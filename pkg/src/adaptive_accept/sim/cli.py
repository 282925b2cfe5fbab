"""Command-line experiment runner.

Subcommands:
  run     every scenario x strategy cell of a suite; writes metrics.csv and summary.json
  grid    exhaustive fixed-horizon search for one scenario
  decide  one adaptive decision at a scenario's start state, dumped as JSON

Exit codes: 0 on completion, 1 for configuration errors, 2 for runtime errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from ..trajectory import State
from ..verifier import a3_decide
from .harness import a3_settings, grid_search_fixed, run_suite, table_csv, write_outputs
from .scenario import ConfigError, Strategy, default_config_path, load_config
from .world import build_policy

log = logging.getLogger("adaptive_accept")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-accept", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", default=None, help="suite YAML (default: bundled configs/default.yaml)")
    parser.add_argument("--out-dir", default="results", help="directory for metrics.csv and summary.json")
    parser.add_argument("--seed", type=int, default=None, help="override the suite's first episode seed")
    parser.add_argument("--episodes", type=int, default=None, help="override the episode count per cell")
    parser.add_argument("--workers", type=int, default=1, help="worker processes for episodes")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", help="run the whole suite")
    grid = sub.add_parser("grid", help="fixed-horizon grid search")
    grid.add_argument("--scenario", default=None, help="scenario name (default: first in the suite)")
    decide = sub.add_parser("decide", help="dump one adaptive decision")
    decide.add_argument("--scenario", default=None)
    decide.add_argument("--K", type=int, default=8)
    decide.add_argument("--w", type=int, default=1)
    return parser


def _load(args):
    config = load_config(args.config or default_config_path())
    if args.seed is not None:
        config.seed = args.seed
    if args.episodes is not None:
        if args.episodes < 1:
            raise ConfigError("--episodes must be positive")
        config.episodes = args.episodes
    return config


def _pick(config, name):
    if name is None:
        if not config.scenarios:
            raise ConfigError("the suite defines no scenarios")
        return config.scenarios[0]
    return config.scenario(name)


def _cmd_run(config, args) -> None:
    table = run_suite(config, workers=args.workers)
    csv_path, json_path = write_outputs(table, args.out_dir, config)
    sys.stdout.write(table_csv(table))
    log.info("wrote %s and %s", csv_path, json_path)


def _cmd_grid(config, args) -> None:
    scenario = _pick(config, args.scenario)
    result = grid_search_fixed(scenario, None, config.seeds(), workers=args.workers)
    write_outputs(result.cells, args.out_dir, config)
    sys.stdout.write(table_csv(result.cells))
    print(json.dumps({"scenario": scenario.name, "best_l": result.best_l, "best_success": result.best_success}))


def _cmd_decide(config, args) -> None:
    scenario = _pick(config, args.scenario)
    strategy = Strategy.a3(args.K, args.w)
    cluster_cfg, threshold = a3_settings(scenario, strategy)
    policy = build_policy(scenario)
    base = State(scenario.start)
    _, report, outcome = a3_decide(policy, base, strategy.k, strategy.w, cluster_cfg, threshold, config.seed)
    dump = {
        "scenario": scenario.name,
        "base": base.pose.tolist(),
        "cluster_config": dataclasses.asdict(cluster_cfg),
        "threshold": threshold.per_dim.tolist(),
        "consensus": report.to_dict(),
        "verification": outcome.to_dict(),
    }
    print(json.dumps(dump, indent=2))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    np.set_printoptions(precision=4, suppress=True)
    try:
        config = _load(args)
        {"run": _cmd_run, "grid": _cmd_grid, "decide": _cmd_decide}[args.command](config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
