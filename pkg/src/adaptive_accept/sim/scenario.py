"""Scenario, strategy and suite configuration types, plus YAML loading.

A suite file is a YAML mapping::

    seed: 0              # first episode seed; episode i uses seed + i
    episodes: 500
    scenarios:
      - name: default    # any Scenario field may be overridden here
        observation_noise: 0.0
        sweep:           # optional: one variant per listed value
          observation_noise: [0.0, 0.1]
        policy: {growth: 1.1}
    strategies:
      - {kind: fixed, l: all}       # all, an integer, or a list of integers
      - {kind: a3, K: 8, w: 1}

Unknown keys and ill-typed values raise ConfigError naming the field and line.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..trajectory import State


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ConfigError(f"ball radius must be positive, got {self.radius}")

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True)
class PolicyParams:
    speed: float = 0.5
    lookahead: float = 1.0
    delta: tuple = (0.1, 0.1)
    sigma0: float | None = None
    pass_rate: float = 0.9
    rho: float = 0.8
    growth: float = 1.1
    gate_softness: float = 3.0
    noise_gain: float = 10.0
    routes: tuple = (
        ((1.0, 1.4), (3.0, 1.4), (4.5, 0.0)),
        ((1.0, -1.4), (3.0, -1.4), (4.5, 0.0)),
    )


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str = "default"
    d_c: int = 2
    horizon: int = 10
    start: np.ndarray = field(default_factory=lambda: np.zeros(2))
    goal: State = field(default_factory=lambda: State([10.0, 0.0]))
    success_radius: float = 0.25
    obstacles: tuple = (
        Ball([2.0, 0.0], 0.9),
        Ball([10.0, 1.0], 0.6),
        Ball([10.0, -1.0], 0.6),
    )
    phase_map: tuple = ((Ball([10.0, 0.0], 2.0), 2.0),)
    step_budget: int = 60
    observation_noise: float = 0.0
    seed: int = 0
    policy: PolicyParams = field(default_factory=PolicyParams)

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        if self.success_radius <= 0:
            raise ConfigError(f"success_radius must be positive, got {self.success_radius}")
        if self.step_budget < self.horizon:
            raise ConfigError(f"step_budget {self.step_budget} must be at least the horizon {self.horizon}")
        if self.observation_noise < 0:
            raise ConfigError("observation_noise must be non-negative")
        if self.start.shape != (self.d_c,) or self.goal.dim != self.d_c:
            raise ConfigError(f"start and goal must have d_c={self.d_c} coordinates")
        if len(self.policy.delta) != self.d_c:
            raise ConfigError(f"policy.delta must have d_c={self.d_c} entries")

    def with_seed(self, seed: int) -> Scenario:
        return dataclasses.replace(self, seed=seed)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "d_c": self.d_c,
            "horizon": self.horizon,
            "start": self.start.tolist(),
            "goal": self.goal.pose.tolist(),
            "success_radius": self.success_radius,
            "obstacles": [b.to_dict() for b in self.obstacles],
            "phase_map": [{"region": r.to_dict(), "multiplier": m} for r, m in self.phase_map],
            "step_budget": self.step_budget,
            "observation_noise": self.observation_noise,
            "seed": self.seed,
            "policy": dataclasses.asdict(self.policy),
        }


@dataclass(frozen=True)
class Strategy:
    """Either ``fixed`` with commitment ``l`` or ``a3`` with its sampling and clustering knobs."""

    kind: str
    l: int = 1
    k: int = 8
    w: int = 1
    tau: float | None = None
    delta_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "a3"):
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        if self.kind == "fixed" and self.l < 1:
            raise ConfigError(f"fixed horizon must be >= 1, got {self.l}")
        if self.kind == "a3" and (self.k < 1 or self.w < 0 or self.delta_scale <= 0):
            raise ConfigError("a3 strategy needs K >= 1, w >= 0 and delta_scale > 0")

    @classmethod
    def fixed(cls, l: int) -> Strategy:
        return cls("fixed", l=l)

    @classmethod
    def a3(cls, k: int = 8, w: int = 1, tau: float | None = None, delta_scale: float = 1.0) -> Strategy:
        return cls("a3", k=k, w=w, tau=tau, delta_scale=delta_scale)

    @property
    def label(self) -> str:
        if self.kind == "fixed":
            return f"fixed(l={self.l})"
        extra = "" if self.tau is None else f",tau={self.tau:g}"
        extra += "" if self.delta_scale == 1.0 else f",delta_scale={self.delta_scale:g}"
        return f"a3(K={self.k},w={self.w}{extra})"


@dataclass
class SuiteConfig:
    seed: int = 0
    episodes: int = 100
    scenarios: list = field(default_factory=list)
    strategies: list = field(default_factory=list)

    def seeds(self) -> list[int]:
        return list(range(self.seed, self.seed + self.episodes))

    def scenario(self, name: str) -> Scenario:
        for s in self.scenarios:
            if s.name == name:
                return s
        raise ConfigError(f"no scenario named {name!r}; known: {[s.name for s in self.scenarios]}")


class _LineDict(dict):
    lines: dict


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LineDict()
    out.lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _where(mapping, key, path: str) -> str:
    line = getattr(mapping, "lines", {}).get(key)
    return f"{path}.{key}" + (f" (line {line})" if line else "")


def _number(mapping, key, path, kind=float, default=None):
    if key not in mapping:
        return default
    value = mapping[key]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{_where(mapping, key, path)}: expected an integer, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{_where(mapping, key, path)}: expected a number, got {value!r}")
    return float(value)


def _vector(mapping, key, path, dim=None):
    value = mapping[key]
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{_where(mapping, key, path)}: expected a list of numbers, got {value!r}") from None
    if arr.ndim != 1 or (dim is not None and arr.size != dim):
        raise ConfigError(f"{_where(mapping, key, path)}: expected {dim or 'a list of'} numbers, got {value!r}")
    return arr


def _check_keys(mapping, allowed, path):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(mapping).__name__}")
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"{_where(mapping, key, path)}: unknown field {key!r}")


def _ball(entry, path) -> Ball:
    _check_keys(entry, {"center", "radius"}, path)
    if "center" not in entry or "radius" not in entry:
        raise ConfigError(f"{path}: a region needs 'center' and 'radius'")
    radius = _number(entry, "radius", path)
    if radius <= 0:
        raise ConfigError(f"{_where(entry, 'radius', path)}: radius must be positive")
    return Ball(_vector(entry, "center", path), radius)


_POLICY_FIELDS = {f.name for f in dataclasses.fields(PolicyParams)}
_SCENARIO_FIELDS = {f.name for f in dataclasses.fields(Scenario)} | {"sweep", "H"}


def _policy(entry, path) -> PolicyParams:
    _check_keys(entry, _POLICY_FIELDS, path)
    kwargs: dict[str, Any] = {}
    for key in entry:
        if key == "delta":
            kwargs[key] = tuple(_vector(entry, key, path).tolist())
        elif key == "routes":
            routes = entry[key]
            if not isinstance(routes, list) or not routes:
                raise ConfigError(f"{_where(entry, key, path)}: expected a non-empty list of waypoint lists")
            try:
                kwargs[key] = tuple(tuple(tuple(float(c) for c in wp) for wp in route) for route in routes)
            except (TypeError, ValueError):
                raise ConfigError(f"{_where(entry, key, path)}: waypoints must be lists of numbers") from None
        elif key == "sigma0" and entry[key] is None:
            kwargs[key] = None
        else:
            kwargs[key] = _number(entry, key, path)
    return PolicyParams(**kwargs)


def _scenario(entry, path) -> list[Scenario]:
    _check_keys(entry, _SCENARIO_FIELDS, path)
    kwargs: dict[str, Any] = {}
    for key in entry:
        if key in ("sweep",):
            continue
        name = "horizon" if key == "H" else key
        if key == "name":
            kwargs["name"] = str(entry[key])
        elif key in ("d_c", "horizon", "H", "step_budget", "seed"):
            kwargs[name] = _number(entry, key, path, int)
        elif key in ("success_radius", "observation_noise"):
            kwargs[name] = _number(entry, key, path)
        elif key == "start":
            kwargs[name] = _vector(entry, key, path)
        elif key == "goal":
            kwargs[name] = State(_vector(entry, key, path))
        elif key == "obstacles":
            kwargs[name] = tuple(_ball(b, f"{path}.obstacles[{i}]") for i, b in enumerate(entry[key] or []))
        elif key == "phase_map":
            phases = []
            for i, ph in enumerate(entry[key] or []):
                p = f"{path}.phase_map[{i}]"
                _check_keys(ph, {"region", "multiplier"}, p)
                mult = _number(ph, "multiplier", p)
                if mult is None or mult <= 0:
                    raise ConfigError(f"{p}: multiplier must be a positive number")
                phases.append((_ball(ph.get("region", {}), p + ".region"), mult))
            kwargs[name] = tuple(phases)
        elif key == "policy":
            kwargs[name] = _policy(entry[key], path + ".policy")
    if "d_c" in kwargs and "start" not in kwargs:
        kwargs["start"] = np.zeros(kwargs["d_c"])
    try:
        base = Scenario(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    sweep = entry.get("sweep")
    if not sweep:
        return [base]
    _check_keys(sweep, {"observation_noise", "success_radius", "step_budget"}, path + ".sweep")
    keys = list(sweep)
    grids = []
    for key in keys:
        values = sweep[key]
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{_where(sweep, key, path + '.sweep')}: expected a non-empty list")
        grids.append(values)
    variants = []
    for combo in itertools.product(*grids):
        label = ",".join(f"{k}={v}" for k, v in zip(keys, combo))
        try:
            variants.append(dataclasses.replace(base, name=f"{base.name}[{label}]", **dict(zip(keys, combo))))
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"{path}.sweep: {exc}") from None
    return variants


def _strategies(entry, path, index) -> list[dict]:
    p = f"{path}[{index}]"
    _check_keys(entry, {"kind", "l", "K", "w", "tau", "delta_scale"}, p)
    kind = entry.get("kind")
    if kind == "fixed":
        l = entry.get("l", "all")
        if l == "all":
            return [{"kind": "fixed", "l": "all"}]
        ls = l if isinstance(l, list) else [l]
        if not all(isinstance(x, int) and not isinstance(x, bool) and x >= 1 for x in ls):
            raise ConfigError(f"{_where(entry, 'l', p)}: expected 'all', a positive integer, or a list of them")
        return [{"kind": "fixed", "l": x} for x in ls]
    if kind == "a3":
        return [
            {
                "kind": "a3",
                "k": _number(entry, "K", p, int, 8),
                "w": _number(entry, "w", p, int, 1),
                "tau": _number(entry, "tau", p, float, None),
                "delta_scale": _number(entry, "delta_scale", p, float, 1.0),
            }
        ]
    raise ConfigError(f"{p}.kind: expected 'fixed' or 'a3', got {kind!r}")


def strategies_for(specs: list[dict], scenario: Scenario) -> list[Strategy]:
    out = []
    for item in specs:
        if item["kind"] == "fixed" and item["l"] == "all":
            out.extend(Strategy.fixed(l) for l in range(1, scenario.horizon + 1))
        elif item["kind"] == "fixed":
            if item["l"] > scenario.horizon:
                raise ConfigError(f"fixed horizon {item['l']} exceeds scenario {scenario.name!r} horizon {scenario.horizon}")
            out.append(Strategy.fixed(item["l"]))
        else:
            out.append(Strategy.a3(item["k"], item["w"], item["tau"], item["delta_scale"]))
    return out


def parse_config(text: str) -> SuiteConfig:
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from None
    if raw is None:
        raw = _LineDict()
        raw.lines = {}
    _check_keys(raw, {"seed", "episodes", "scenarios", "strategies"}, "config")
    seed = _number(raw, "seed", "config", int, 0)
    episodes = _number(raw, "episodes", "config", int, 100)
    if episodes < 1:
        raise ConfigError(f"{_where(raw, 'episodes', 'config')}: episodes must be positive")
    scenarios = []
    for i, entry in enumerate(raw.get("scenarios") or [{}]):
        scenarios.extend(_scenario(entry, f"config.scenarios[{i}]"))
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ConfigError(f"config.scenarios: duplicate scenario names {names}")
    strategies = []
    for i, entry in enumerate(raw.get("strategies") or []):
        strategies.extend(_strategies(entry, "config.strategies", i))
    return SuiteConfig(seed=seed, episodes=episodes, scenarios=scenarios, strategies=strategies)


def load_config(path: str | Path) -> SuiteConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def default_config_path() -> Path:
    return Path(__file__).resolve().parent.parent / "configs" / "default.yaml"
