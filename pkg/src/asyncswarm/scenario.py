"""Scenario files: schema, validation, overrides and the bundled default.

Scenario files are YAML. Headings are written in degrees; the config keeps
them that way (so writing and re-loading a config is lossless) and converts
to radians when the solver-facing arrays are built.
"""

from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .model import ConfigurationError


class ScenarioError(ConfigurationError):
    """Invalid scenario file; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class AgentSpec:
    initial: tuple[float, float, float]  # x, y, heading in degrees
    target: tuple[float, float, float]


@dataclass(frozen=True)
class ModelSpec:
    speed: float = 30.0
    omega_max: float = 0.5678
    horizon_steps: int = 100


@dataclass(frozen=True)
class TimeSpec:
    t_min: float = 0.1
    t_max: float = 20.0
    initial_guess: float = 9.0


@dataclass(frozen=True)
class CostSpec:
    terminal_weight: float = 25.0
    control_weight: float = 1.0
    state_weight: float = 0.0


@dataclass(frozen=True)
class ObstacleSpec:
    centers: tuple[tuple[float, float], ...] = ()
    radii: tuple[float, ...] = ()
    safe_margin: float = 0.0


@dataclass(frozen=True)
class ProximityConfig:
    d_col: float = 10.0
    d_con: float = 390.0


@dataclass(frozen=True)
class SequenceSpec:
    interval: float = 0.1
    relax: float = 0.01
    order: tuple[int, ...] = ()  # agent ids in arrival order; empty means 0..M-1


@dataclass(frozen=True)
class PenaltySpec:
    pen_u: float = 0.2
    pen_x: float = 2.0
    pen_t: float = 2.0
    pen_xa: float = 1.0
    pen_ta: float = 1.0
    growth: float = 1.0  # per worker iteration
    cap: float = 1.0  # largest multiple of the base values


@dataclass(frozen=True)
class PddpSpec:
    damping: float = 0.4
    max_iters: int = 50
    cost_tol: float = 1e-6
    init_max_iters: int = 300


@dataclass(frozen=True)
class StoppingSpec:
    eps_abs: float = 5e-4
    eps_rel: float = 6e-2


@dataclass(frozen=True)
class ProtocolSpec:
    barrier: int = 2
    delay_bound: int = 10
    p_con: float = 0.7
    seed: int = 0
    max_commits: int = 2000
    max_time: float = 20000.0
    symmetric_loss: bool = False
    link_latency: float = 0.05
    retry_backoff: float = 1.0
    speed_range: tuple[float, float] = (1.0, 2.0)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    agents: tuple[AgentSpec, ...]
    model: ModelSpec = field(default_factory=ModelSpec)
    time: TimeSpec = field(default_factory=TimeSpec)
    cost: CostSpec = field(default_factory=CostSpec)
    obstacles: ObstacleSpec = field(default_factory=ObstacleSpec)
    proximity: ProximityConfig = field(default_factory=ProximityConfig)
    neighborhood_size: int = 3
    sequence: SequenceSpec = field(default_factory=SequenceSpec)
    penalties: PenaltySpec = field(default_factory=PenaltySpec)
    pddp: PddpSpec = field(default_factory=PddpSpec)
    stopping: StoppingSpec = field(default_factory=StoppingSpec)
    protocol: ProtocolSpec = field(default_factory=ProtocolSpec)
    mode: str = "async"  # async | sync

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    def initial_states(self) -> np.ndarray:
        """(M, 3) with headings in radians."""
        return _to_rad([a.initial for a in self.agents])

    def target_states(self) -> np.ndarray:
        return _to_rad([a.target for a in self.agents])

    def arrival_order(self) -> tuple[int, ...]:
        return self.sequence.order or tuple(range(self.num_agents))

    def arrival_rank(self) -> np.ndarray:
        rank = np.empty(self.num_agents, dtype=int)
        rank[list(self.arrival_order())] = np.arange(self.num_agents)
        return rank

    def effective_protocol(self) -> ProtocolSpec:
        """Protocol after applying the mode: sync forces lossless lockstep rounds."""
        if self.mode == "sync":
            return dataclasses.replace(self.protocol, p_con=1.0, barrier=self.num_agents, delay_bound=1)
        return self.protocol


def _to_rad(rows) -> np.ndarray:
    a = np.array(rows, dtype=float).reshape(-1, 3)
    a[:, 2] = np.deg2rad(a[:, 2])
    return a


# -- parsing -----------------------------------------------------------------

_SECTIONS = {
    "model": ModelSpec,
    "time": TimeSpec,
    "cost": CostSpec,
    "obstacles": ObstacleSpec,
    "proximity": ProximityConfig,
    "sequence": SequenceSpec,
    "penalties": PenaltySpec,
    "pddp": PddpSpec,
    "stopping": StoppingSpec,
    "protocol": ProtocolSpec,
}


def _number(path, v, kind=float):
    if isinstance(v, str):
        # YAML 1.1 reads exponent forms without a dot, such as 1e-9, as strings
        try:
            v = float(v)
        except ValueError:
            raise ScenarioError(path, f"expected a number, got {v!r}") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(path, f"expected a number, got {v!r}")
    if kind is int:
        if int(v) != v:
            raise ScenarioError(path, f"expected an integer, got {v!r}")
        return int(v)
    v = float(v)
    if not math.isfinite(v):
        raise ScenarioError(path, "must be finite")
    return v


def _vector(path, v, n=None):
    if not isinstance(v, (list, tuple)):
        raise ScenarioError(path, f"expected a list, got {v!r}")
    if n is not None and len(v) != n:
        raise ScenarioError(path, f"expected {n} entries, got {len(v)}")
    return tuple(_number(f"{path}[{k}]", x) for k, x in enumerate(v))


def _coerce(path, name, value, default):
    """Coerce one section field to the type of its default."""
    p = f"{path}.{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ScenarioError(p, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        return _number(p, value, int)
    if isinstance(default, float):
        return _number(p, value)
    if name == "centers":
        if not isinstance(value, (list, tuple)):
            raise ScenarioError(p, "expected a list of [x, y] pairs")
        return tuple(_vector(f"{p}[{k}]", c, 2) for k, c in enumerate(value))
    if name == "order":
        if not isinstance(value, (list, tuple)):
            raise ScenarioError(p, "expected a list of agent ids")
        return tuple(_number(f"{p}[{k}]", x, int) for k, x in enumerate(value))
    if name == "speed_range":
        return _vector(p, value, 2)
    if isinstance(default, tuple):
        return _vector(p, value)
    return value


def _section(name, cls, raw):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ScenarioError(name, "expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ScenarioError(f"{name}.{sorted(unknown)[0]}", "unknown field")
    defaults = cls()
    kwargs = {k: _coerce(name, k, v, getattr(defaults, k)) for k, v in raw.items()}
    return cls(**kwargs)


_REQUIRED = ("name", "agents")


def from_dict(raw: dict[str, Any]) -> ScenarioConfig:
    """Build and validate a config from the plain YAML structure."""
    if not isinstance(raw, dict):
        raise ScenarioError("<root>", "scenario must be a mapping")
    for key in _REQUIRED:
        if key not in raw:
            raise ScenarioError(key, "missing required field")
    known = set(_REQUIRED) | set(_SECTIONS) | {"neighborhood_size", "mode"}
    unknown = set(raw) - known
    if unknown:
        raise ScenarioError(sorted(unknown)[0], "unknown field")
    agents_raw = raw["agents"]
    if not isinstance(agents_raw, list) or not agents_raw:
        raise ScenarioError("agents", "expected a non-empty list")
    agents = []
    for k, a in enumerate(agents_raw):
        if not isinstance(a, dict):
            raise ScenarioError(f"agents[{k}]", "expected a mapping with initial and target")
        for key in ("initial", "target"):
            if key not in a:
                raise ScenarioError(f"agents[{k}].{key}", "missing required field")
        agents.append(AgentSpec(_vector(f"agents[{k}].initial", a["initial"], 3), _vector(f"agents[{k}].target", a["target"], 3)))
    sections = {name: _section(name, cls, raw.get(name)) for name, cls in _SECTIONS.items()}
    cfg = ScenarioConfig(
        name=str(raw["name"]),
        agents=tuple(agents),
        neighborhood_size=_number("neighborhood_size", raw.get("neighborhood_size", 3), int),
        mode=raw.get("mode", "async"),
        **sections,
    )
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    m = cfg.num_agents

    def need(ok, path, msg):
        if not ok:
            raise ScenarioError(path, msg)

    need(cfg.mode in ("async", "sync"), "mode", f"expected async or sync, got {cfg.mode!r}")
    need(cfg.model.speed > 0, "model.speed", "must be positive")
    need(cfg.model.omega_max > 0, "model.omega_max", "must be positive")
    need(cfg.model.horizon_steps >= 2, "model.horizon_steps", "must be >= 2")
    t = cfg.time
    need(0 < t.t_min < t.t_max, "time.t_min", "need 0 < t_min < t_max")
    need(t.t_min <= t.initial_guess <= t.t_max, "time.initial_guess", "must lie in [t_min, t_max]")
    need(cfg.cost.terminal_weight >= 0, "cost.terminal_weight", "must be non-negative")
    need(cfg.cost.control_weight > 0, "cost.control_weight", "must be positive")
    need(cfg.cost.state_weight >= 0, "cost.state_weight", "must be non-negative")
    ob = cfg.obstacles
    need(len(ob.centers) == len(ob.radii), "obstacles.radii", "must match obstacles.centers in length")
    need(all(r > 0 for r in ob.radii), "obstacles.radii", "must be positive")
    need(ob.safe_margin >= 0, "obstacles.safe_margin", "must be non-negative")
    need(cfg.proximity.d_col > 0, "proximity.d_col", "must be positive")
    need(cfg.proximity.d_col < cfg.proximity.d_con, "proximity.d_col", "must be smaller than proximity.d_con")
    need(1 <= cfg.neighborhood_size <= m, "neighborhood_size", f"must lie in [1, {m}]")
    for name in ("pen_u", "pen_x", "pen_t", "pen_xa", "pen_ta"):
        need(getattr(cfg.penalties, name) > 0, f"penalties.{name}", "must be positive")
    need(cfg.penalties.growth >= 1.0, "penalties.growth", "must be >= 1")
    need(cfg.penalties.cap >= 1.0, "penalties.cap", "must be >= 1")
    need(0 < cfg.pddp.damping <= 1, "pddp.damping", "must lie in (0, 1]")
    need(cfg.pddp.max_iters >= 1, "pddp.max_iters", "must be >= 1")
    need(cfg.pddp.init_max_iters >= 1, "pddp.init_max_iters", "must be >= 1")
    need(cfg.pddp.cost_tol > 0, "pddp.cost_tol", "must be positive")
    need(cfg.stopping.eps_abs >= 0, "stopping.eps_abs", "must be non-negative")
    need(cfg.stopping.eps_rel >= 0, "stopping.eps_rel", "must be non-negative")
    pr = cfg.protocol
    need(1 <= pr.barrier <= m, "protocol.barrier", f"must lie in [1, {m}]")
    need(pr.delay_bound >= 1, "protocol.delay_bound", "must be >= 1")
    need(0.0 <= pr.p_con <= 1.0, "protocol.p_con", "must lie in [0, 1]")
    need(0 <= pr.seed < 2**64, "protocol.seed", "must be an unsigned 64-bit integer")
    need(pr.max_commits >= 1, "protocol.max_commits", "must be >= 1")
    need(pr.max_time > 0, "protocol.max_time", "must be positive")
    need(pr.link_latency >= 0, "protocol.link_latency", "must be non-negative")
    need(pr.retry_backoff > 0, "protocol.retry_backoff", "must be positive")
    lo, hi = pr.speed_range
    need(0 < lo <= hi, "protocol.speed_range", "need 0 < lo <= hi")
    sq = cfg.sequence
    need(sq.interval >= 0, "sequence.interval", "must be non-negative")
    need(sq.relax >= 0, "sequence.relax", "must be non-negative")
    order = cfg.arrival_order()
    need(sorted(order) == list(range(m)), "sequence.order", "must be a permutation of the agent ids")
    # the whole arrival schedule must fit inside the admissible flight-time window
    span = sq.interval * (m - 1)
    need(span <= (t.t_max - t.t_min) + 2 * sq.relax, "sequence.interval", "arrival schedule does not fit in [t_min, t_max]")


def to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    return plain(cfg)


def dump_scenario(cfg: ScenarioConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))
    return path


def bundled_path(name: str = "default") -> Path:
    return Path(str(resources.files("asyncswarm") / "scenarios" / f"{name}.yaml"))


def read_raw(source) -> dict[str, Any]:
    """Raw mapping from a file path or a bundled scenario name."""
    p = Path(source)
    if not p.exists() and not p.suffix:
        p = bundled_path(str(source))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError("<file>", f"cannot read {source}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError("<file>", f"invalid YAML: {exc}") from exc
    return raw


def apply_overrides(raw: dict[str, Any], overrides) -> dict[str, Any]:
    """Apply ``key.sub=value`` strings; values are parsed as YAML scalars."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ScenarioError(str(item), "override must look like key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ScenarioError(key, "cannot descend into a non-mapping")
        node[parts[-1]] = yaml.safe_load(text)
    return out


def load_scenario(source="default", overrides=()) -> ScenarioConfig:
    return from_dict(apply_overrides(read_raw(source), overrides))
