"""Module graphs of reservoirs and actuators, built from a TOML station inventory.

A configuration declares stations (each with reservoirs and actuators) and a
``sequence`` such as ``"1-3-2//3-4"``.  Stages are separated by ``-``; ``//``
places stations side by side in one stage.  A station listed twice is
instantiated twice, the copy's element names suffixed with ``#2``, ``#3``...

Actuators name their source as ``"supply"`` (unlimited system inlet),
``"upstream"`` (the exit reservoirs of the preceding stage) or a reservoir of
their own station.  Stations flagged ``sink = true`` consume the product at the
demand rate from the exits of the stage before them.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, field, replace
from graphlib import CycleError, TopologicalSorter
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigurationError, TopologyError

ACTUATOR_KINDS = ("continuous", "duration", "binary")
SILO_L = 17.42
HOPPER_L = 9.1
CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@dataclass(frozen=True)
class ReservoirSpec:
    name: str
    capacity: float
    initial_fill: float = 0.5
    H_p: float = 0.1
    H_s: float = 0.9
    station: str = ""

    def __post_init__(self):
        if not self.capacity > 0:
            raise ConfigurationError(f"reservoir {self.name}: capacity must be > 0")
        if not 0.0 <= self.initial_fill <= 1.0:
            raise ConfigurationError(f"reservoir {self.name}: initial_fill must lie in [0, 1]")
        if not 0.0 <= self.H_p < self.H_s <= 1.0:
            raise ConfigurationError(f"reservoir {self.name}: need 0 <= H_p < H_s <= 1")


@dataclass(frozen=True)
class ActuatorSpec:
    name: str
    kind: str
    max_flow_lps: float
    power_nominal_kw: float
    power_standby_kw: float = 0.0
    sources: tuple[str, ...] = ()
    sink: str = ""
    station: str = ""
    base: str = ""

    def __post_init__(self):
        if self.kind not in ACTUATOR_KINDS:
            raise ConfigurationError(f"actuator {self.name}: unknown kind {self.kind!r}")
        if self.max_flow_lps < 0 or self.power_nominal_kw < 0 or self.power_standby_kw < 0:
            raise ConfigurationError(f"actuator {self.name}: flows and powers must be >= 0")
        if self.power_standby_kw > self.power_nominal_kw:
            raise ConfigurationError(f"actuator {self.name}: standby power exceeds nominal")

    @property
    def is_inlet(self) -> bool:
        return not self.sources


@dataclass(frozen=True)
class UtilityWeights:
    alpha_L: float = 1.0
    alpha_P: float = 1.0
    alpha_D: float = 0.5
    H_p: float = 0.1
    H_s: float = 0.9

    def __post_init__(self):
        if min(self.alpha_L, self.alpha_P, self.alpha_D) <= 0:
            raise ConfigurationError("utility weights must be > 0")
        if not 0.0 <= self.H_p < self.H_s <= 1.0:
            raise ConfigurationError("need 0 <= H_p < H_s <= 1")


@dataclass
class ModuleGraph:
    """Directed graph alternating between reservoirs (states) and actuators (players)."""

    reservoirs: dict[str, ReservoirSpec]
    actuators: dict[str, ActuatorSpec]
    final_buffers: tuple[str, ...]
    demand_lps: float = 0.125
    weights: UtilityWeights = field(default_factory=UtilityWeights)
    utility_form: str = "bgs"
    limit_watch: str = "supply"
    sequence: str = ""

    def __post_init__(self):
        self.validate()

    @property
    def players(self) -> list[str]:
        return list(self.actuators)

    def edges(self) -> list[tuple[str, str]]:
        out = []
        for a in self.actuators.values():
            out.extend((s, a.name) for s in a.sources)
            out.append((a.name, a.sink))
        return out

    def prior(self, player: str) -> tuple[str, ...]:
        return self.actuators[player].sources

    def next(self, player: str) -> tuple[str, ...]:
        return (self.actuators[player].sink,)

    def state_reservoirs(self, player: str) -> tuple[str, ...]:
        return self.prior(player) + self.next(player)

    def is_last(self, player: str) -> bool:
        return self.actuators[player].sink in self.final_buffers

    def validate(self) -> None:
        validate_edges(self.reservoirs, self.actuators, self.edges())
        for f in self.final_buffers:
            if f not in self.reservoirs:
                raise TopologyError("final buffer is not a reservoir", f)
        if not self.final_buffers:
            raise TopologyError("graph has no final buffer")
        if self.utility_form not in ("bgs", "lsbgs"):
            raise ConfigurationError(f"unknown utility form {self.utility_form!r}")
        if self.limit_watch not in ("supply", "guard"):
            raise ConfigurationError(f"unknown limit_watch {self.limit_watch!r}")
        if self.demand_lps < 0:
            raise ConfigurationError("demand_lps must be >= 0")


def validate_edges(reservoirs, actuators, edges) -> None:
    """Check the alternating structure, dangling references and acyclicity."""
    if not actuators:
        raise TopologyError("graph has no actuators")
    kind = {**{r: "reservoir" for r in reservoirs}, **{a: "actuator" for a in actuators}}
    if set(reservoirs) & set(actuators):
        raise TopologyError("names shared by a reservoir and an actuator",
                            sorted(set(reservoirs) & set(actuators))[0])
    touched = set()
    preds: dict[str, set] = {n: set() for n in kind}
    for u, v in edges:
        for node in (u, v):
            if node not in kind:
                raise TopologyError("edge references an unknown element", f"{u} -> {v}")
        if kind[u] == kind[v]:
            raise TopologyError(f"{kind[u]}-{kind[v]} edge breaks the alternating structure",
                                f"{u} -> {v}")
        touched.update((u, v))
        preds[v].add(u)
    for name, k in kind.items():
        if name not in touched:
            raise TopologyError(f"dangling {k} with no connections", name)
    for a in actuators:
        sinks = [v for u, v in edges if u == a]
        if len(sinks) != 1:
            raise TopologyError("actuator must feed exactly one reservoir", a)
    try:
        tuple(TopologicalSorter(preds).static_order())
    except CycleError as exc:
        raise TopologyError("material flow contains a cycle", " -> ".join(exc.args[1])) from None


def parse_sequence(text: str) -> list[list[str]]:
    text = (text or "").strip()
    if not text:
        raise TopologyError("empty sequence")
    stages = []
    for chunk in text.split("-"):
        members = [m.strip() for m in chunk.split("//")]
        if any(not m for m in members):
            raise TopologyError("empty station reference in sequence", text)
        stages.append(members)
    return stages


def _suffix(name: str, copy: int) -> str:
    return name if copy == 1 else f"{name}#{copy}"


def build_graph(cfg: dict, sequence: str | None = None) -> ModuleGraph:
    """Assemble a ModuleGraph from a parsed configuration mapping."""
    if not cfg:
        raise TopologyError("empty configuration")
    stations = {str(k): v for k, v in (cfg.get("station") or {}).items()}
    actuators_cfg = cfg.get("actuator") or {}
    if not stations:
        raise TopologyError("configuration declares no stations")
    util = dict(cfg.get("utility") or {})
    weights = UtilityWeights(
        alpha_L=float(util.get("alpha_L", 1.0)),
        alpha_P=float(util.get("alpha_P", 1.0)),
        alpha_D=float(util.get("alpha_D", 0.5)),
        H_p=float(util.get("H_p", 0.1)),
        H_s=float(util.get("H_s", 0.9)),
    )
    seq_text = sequence if sequence is not None else (cfg.get("sequence") or {}).get("order", "")
    stages = parse_sequence(seq_text)

    by_station: dict[str, list[tuple[str, dict]]] = {s: [] for s in stations}
    for aname, acfg in actuators_cfg.items():
        st = str(acfg.get("station", ""))
        if st not in stations:
            raise TopologyError("actuator belongs to an undeclared station", aname)
        by_station[st].append((aname, acfg))

    reservoirs: dict[str, ReservoirSpec] = {}
    actuators: dict[str, ActuatorSpec] = {}
    copies: dict[str, int] = {}
    prev_exits: list[str] = []
    final: list[str] = []
    for pos, stage in enumerate(stages):
        stage_exits: list[str] = []
        for st in stage:
            if st not in stations:
                raise TopologyError("sequence references an undeclared station", st)
            scfg = stations[st]
            copies[st] = copies.get(st, 0) + 1
            copy = copies[st]
            if scfg.get("sink", False):
                if pos != len(stages) - 1 or len(stage) != 1:
                    raise TopologyError("sink station must be the sole member of the last stage", st)
                if not prev_exits:
                    raise TopologyError("sink station has nothing upstream", st)
                final = list(prev_exits)
                continue
            local: dict[str, str] = {}
            res_cfg = scfg.get("reservoirs") or {}
            if not res_cfg:
                raise TopologyError("station declares no reservoirs", st)
            for rname, rc in res_cfg.items():
                if isinstance(rc, (int, float)):
                    rc = {"capacity": rc}
                full = _suffix(rname, copy)
                local[rname] = full
                reservoirs[full] = ReservoirSpec(
                    name=full,
                    capacity=float(rc["capacity"]),
                    initial_fill=float(rc.get("initial_fill", scfg.get("initial_fill", 0.5))),
                    H_p=float(rc.get("H_p", weights.H_p)),
                    H_s=float(rc.get("H_s", weights.H_s)),
                    station=st,
                )
            for aname, ac in by_station[st]:
                src = ac.get("source", "upstream")
                if src == "supply":
                    sources: tuple[str, ...] = ()
                elif src == "upstream":
                    if not prev_exits:
                        raise TopologyError("upstream source but no preceding stage", aname)
                    sources = tuple(prev_exits)
                elif src in local:
                    sources = (local[src],)
                else:
                    raise TopologyError(f"unknown source {src!r}", aname)
                sink = ac.get("sink")
                if sink not in local:
                    raise TopologyError(f"unknown sink {sink!r}", aname)
                full = _suffix(aname, copy)
                actuators[full] = ActuatorSpec(
                    name=full,
                    kind=ac.get("kind", "continuous"),
                    max_flow_lps=float(ac["max_flow_lps"]),
                    power_nominal_kw=float(ac["power_nominal_kw"]),
                    power_standby_kw=float(ac.get("power_standby_kw", 0.0)),
                    sources=sources,
                    sink=local[sink],
                    station=st,
                    base=aname,
                )
            exit_name = scfg.get("exit", list(res_cfg)[-1])
            if exit_name not in local:
                raise TopologyError(f"unknown exit reservoir {exit_name!r}", st)
            stage_exits.append(local[exit_name])
        if stage_exits:
            prev_exits = stage_exits
    if not final:
        final = list(prev_exits)
    return ModuleGraph(
        reservoirs=reservoirs,
        actuators=actuators,
        final_buffers=tuple(final),
        demand_lps=float(util.get("demand_lps", 0.125)),
        weights=weights,
        utility_form=util.get("form", "bgs"),
        limit_watch=util.get("limit_watch", "supply"),
        sequence=seq_text,
    )


def parse_config(config_text: str) -> dict:
    try:
        return tomllib.loads(config_text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse configuration: {exc}") from exc


def load_topology(config_text: str, sequence: str | None = None) -> ModuleGraph:
    """Parse TOML text and build the module graph (``sequence`` overrides the file's order)."""
    if not (config_text or "").strip():
        raise TopologyError("empty configuration")
    return build_graph(parse_config(config_text), sequence)


def resolve_config_path(name_or_path) -> Path:
    """Accept a file path or the name of a bundled config (``bgs_default``)."""
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = CONFIG_DIR / f"{name_or_path}.toml"
    if bundled.exists():
        return bundled
    raise ConfigurationError(f"config not found: {name_or_path}")


def read_config(name_or_path) -> tuple[dict, str]:
    """Return the parsed mapping and the raw text of a config file."""
    path = resolve_config_path(name_or_path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text), text


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def with_changes(graph: ModuleGraph, **changes) -> ModuleGraph:
    return replace(graph, **changes)
