"""Desk-scale kinematic rollout harness for comparing commitment strategies."""

from .harness import EpisodeRecord, GridResult, grid_search_fixed, run_episode, run_suite
from .scenario import Ball, ConfigError, PolicyParams, Scenario, Strategy, SuiteConfig, load_config, parse_config
from .world import build_policy

__all__ = [
    "Ball",
    "ConfigError",
    "EpisodeRecord",
    "GridResult",
    "PolicyParams",
    "Scenario",
    "Strategy",
    "SuiteConfig",
    "build_policy",
    "grid_search_fixed",
    "load_config",
    "parse_config",
    "run_episode",
    "run_suite",
]
