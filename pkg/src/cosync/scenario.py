"""Scenario files and experiment execution.

A scenario is one JSON document. ``overlay``, ``power_fixture`` and
``network`` may be given inline or as a file name; file names are looked up
next to the scenario file first and then among the bundled data files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

from .agents import (
    DEFAULT_INITIATOR,
    DEFAULT_THRESHOLD,
    DEFAULT_WAITING_PERIOD,
    Agent,
    AgentConfig,
    OverlayTopology,
    PowerSource,
    generate_overlay,
    overlay_from_json,
)
from .bridge import open_session
from .errors import ConfigParseError, ConfigValidationError, CosyncError, MalformedTopology
from .kernel import MAX_TIME, SimTime
from .netsim import InfrastructureChange, NetworkTopology, build_network
from .orchestrator import Connection, Endpoint, MessageRecord, Orchestrator, RunReport
from .protocol import InitialMessage

log = logging.getLogger(__name__)

MODES = ("ideal", "netsim_inproc", "netsim_wire")
MODE_ALIASES = {"netsim": "netsim_inproc", "netsim-wire": "netsim_wire", "netsim_wire": "netsim_wire",
                "netsim_inproc": "netsim_inproc", "ideal": "ideal"}
BRIDGE_ID = "comm"

_KNOWN_KEYS = {
    "num_agents", "until_us", "waiting_period_us", "threshold_w", "initiator", "mode",
    "overlay", "network", "power_fixture", "infrastructure_changes",
}


@dataclass
class ScenarioConfig:
    num_agents: int
    until_us: SimTime
    waiting_period_us: SimTime
    threshold_w: int
    initiator: str
    mode: str
    overlay: OverlayTopology
    power_fixture: dict[str, dict[str, int]]
    network: Optional[NetworkTopology] = None
    infrastructure_changes: list[InfrastructureChange] = field(default_factory=list)

    def agent_config(self) -> AgentConfig:
        return AgentConfig(self.waiting_period_us, self.threshold_w, self.initiator)

    def total_power(self, agent_id: str) -> int:
        return sum(self.power_fixture[agent_id].values())


@dataclass
class RunStats:
    messages_sent: int
    messages_delivered: int
    messages_lost: int
    records: list[MessageRecord]
    termination_time_us: Optional[SimTime]
    solved: dict[str, dict[str, int]]
    in_flight_at_close: int = 0


def data_path(name: str) -> Path:
    """Path of a bundled data file."""
    return Path(str(resources.files("cosync") / "data" / name))


def _resolve(ref: Any, base: Optional[Path], what: str) -> Any:
    if not isinstance(ref, str):
        return ref
    candidates = ([base / ref] if base is not None else []) + [data_path(ref)]
    for path in candidates:
        if path.is_file():
            return _read_json(path)
    raise ConfigValidationError(what, f"cannot find file {ref!r}")


def _read_json(path: Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigParseError(f"{path} is not valid JSON: {exc}") from exc


def _int(doc: dict, key: str, default: Optional[int] = None, minimum: int = 0) -> int:
    value = doc.get(key, default)
    if value is None:
        raise ConfigValidationError(key, "is required")
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigValidationError(key, f"must be an integer, got {value!r}")
    if value < minimum or value > MAX_TIME:
        raise ConfigValidationError(key, f"must be >= {minimum}, got {value}")
    return value


def normalize_mode(mode: str) -> str:
    try:
        return MODE_ALIASES[mode]
    except (KeyError, TypeError):
        raise ConfigValidationError("mode", f"unknown mode {mode!r} (use one of {', '.join(MODES)})") from None


def _overlay(ref: Any, n: int, base: Optional[Path]) -> OverlayTopology:
    doc = _resolve(ref, base, "overlay")
    if not isinstance(doc, dict):
        raise ConfigValidationError("overlay", "must be an object or a file name")
    try:
        if "adjacency" in doc:
            return overlay_from_json(doc)
        return generate_overlay(n, doc.get("k", 4), doc.get("p", 0.1), doc.get("seed"))
    except CosyncError as exc:
        raise ConfigValidationError("overlay", str(exc)) from exc
    except (KeyError, TypeError) as exc:
        raise ConfigValidationError("overlay", f"malformed overlay: {exc}") from exc


def _power(ref: Any, base: Optional[Path]) -> dict[str, dict[str, int]]:
    doc = _resolve(ref, base, "power_fixture")
    if not isinstance(doc, dict):
        raise ConfigValidationError("power_fixture", "must be an object or a file name")
    fixture: dict[str, dict[str, int]] = {}
    for agent_id, value in sorted(doc.items()):
        where = f"power_fixture.{agent_id}"
        # a bare number is the agent's net PV feed
        parts = {"pv": value} if not isinstance(value, dict) else value
        for kind, watts in parts.items():
            if kind not in ("pv", "household"):
                raise ConfigValidationError(f"{where}.{kind}", "power source kind must be pv or household")
            if not isinstance(watts, int) or isinstance(watts, bool) or watts < 0:
                raise ConfigValidationError(f"{where}.{kind}", f"must be a non-negative integer, got {watts!r}")
        fixture[agent_id] = dict(sorted(parts.items()))
    return fixture


def _changes(raw: Any) -> list[InfrastructureChange]:
    if not isinstance(raw, list):
        raise ConfigValidationError("infrastructure_changes", "must be a list")
    changes = []
    for i, item in enumerate(raw):
        where = f"infrastructure_changes[{i}]"
        if not isinstance(item, dict):
            raise ConfigValidationError(where, "must be an object")
        try:
            changes.append(InfrastructureChange(item.get("action"), item.get("node"), _int(item, "at_us")))
        except ConfigValidationError as exc:
            raise ConfigValidationError(f"{where}.{exc.path}", exc.message) from None
        except (ValueError, TypeError) as exc:
            raise ConfigValidationError(where, str(exc)) from None
    return changes


def parse_scenario(doc: Any, base: Optional[Path] = None) -> ScenarioConfig:
    """Validate a scenario document and apply defaults."""
    if not isinstance(doc, dict):
        raise ConfigValidationError("", "scenario must be a JSON object")
    unknown = sorted(set(doc) - _KNOWN_KEYS)
    if unknown:
        raise ConfigValidationError(unknown[0], "unknown field")

    n = _int(doc, "num_agents", minimum=1)
    until = _int(doc, "until_us")
    wp = _int(doc, "waiting_period_us", DEFAULT_WAITING_PERIOD, minimum=1)
    threshold = _int(doc, "threshold_w", DEFAULT_THRESHOLD, minimum=1)
    initiator = doc.get("initiator", DEFAULT_INITIATOR)
    mode = normalize_mode(doc.get("mode", "netsim_inproc"))

    overlay = _overlay(doc.get("overlay", {"k": 4, "p": 0.1, "seed": 42}), n, base)
    if overlay.n != n:
        raise ConfigValidationError("overlay", f"has {overlay.n} agents, num_agents is {n}")
    if initiator not in overlay.adjacency:
        raise ConfigValidationError("initiator", f"{initiator!r} is not an agent")

    if "power_fixture" not in doc:
        raise ConfigValidationError("power_fixture", "is required")
    power = _power(doc["power_fixture"], base)
    if set(power) != set(overlay.adjacency):
        raise ConfigValidationError(
            "power_fixture", f"has {len(power)} agents, num_agents is {n} (ids must match the overlay)"
        )

    network = None
    if "network" in doc:
        raw = _resolve(doc["network"], base, "network")
        try:
            network = build_network(raw)
        except MalformedTopology as exc:
            raise ConfigValidationError("network", str(exc)) from exc
        if set(network.client_binding) != set(overlay.adjacency):
            raise ConfigValidationError(
                "network.client_binding",
                f"binds {len(network.client_binding)} simulators, num_agents is {n}",
            )
    elif mode != "ideal":
        raise ConfigValidationError("network", f"is required in mode {mode}")

    changes = _changes(doc.get("infrastructure_changes", []))
    for i, change in enumerate(changes):
        if network is not None and change.node not in network.nodes:
            raise ConfigValidationError(f"infrastructure_changes[{i}].node", f"unknown node {change.node!r}")

    return ScenarioConfig(
        num_agents=n, until_us=until, waiting_period_us=wp, threshold_w=threshold,
        initiator=initiator, mode=mode, overlay=overlay, power_fixture=power,
        network=network, infrastructure_changes=changes,
    )


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(_read_json(path), base=path.parent)


def load_bundled_scenario(name: str) -> ScenarioConfig:
    """Load one of the shipped scenarios, e.g. ``"scenario_netsim.json"``."""
    return load_scenario(data_path(name))


def with_overrides(cfg: ScenarioConfig, mode: Optional[str] = None, seed: Optional[int] = None) -> ScenarioConfig:
    """Copy of ``cfg`` with another mode and/or a regenerated overlay."""
    if mode is not None:
        cfg = replace(cfg, mode=normalize_mode(mode))
        if cfg.mode != "ideal" and cfg.network is None:
            raise ConfigValidationError("network", f"is required in mode {cfg.mode}")
    if seed is not None:
        k = cfg.overlay.k or 4
        p = cfg.overlay.p
        try:
            cfg = replace(cfg, overlay=generate_overlay(cfg.num_agents, k, p, seed))
        except CosyncError as exc:
            raise ConfigValidationError("overlay", str(exc)) from exc
    return cfg


def build_orchestrator(cfg: ScenarioConfig) -> Orchestrator:
    """Register and connect all simulators of a scenario (bridge included)."""
    orch = Orchestrator(waiting_period=cfg.waiting_period_us)
    agent_cfg = cfg.agent_config()
    agents = sorted(cfg.overlay.adjacency)
    for agent_id in agents:
        orch.register_simulator(Agent(agent_id, cfg.overlay.neighbors(agent_id), agent_cfg))
        for kind, watts in cfg.power_fixture[agent_id].items():
            source = PowerSource(f"{agent_id}.{kind}", agent_id, kind, watts)
            orch.register_simulator(source)
            orch.connect(Connection(Endpoint(source.sim_id, source.sim_id, "power"),
                                    Endpoint(agent_id, agent_id, "device_power")))

    if cfg.mode == "ideal":
        if cfg.infrastructure_changes:
            log.warning("ideal mode has no network; ignoring %d infrastructure changes",
                        len(cfg.infrastructure_changes))
        for agent_id in agents:
            for nb in cfg.overlay.neighbors(agent_id):
                orch.connect(Connection(Endpoint(agent_id, agent_id, "outbox"), Endpoint(nb, nb, "inbox")))
        return orch

    init = InitialMessage(cfg.until_us, cfg.waiting_period_us)
    bridge = open_session(cfg.mode, init, cfg.network, sim_id=BRIDGE_ID)
    try:
        orch.register_simulator(bridge)
        for agent_id in agents:
            orch.connect(Connection(Endpoint(agent_id, agent_id, "outbox"), Endpoint(BRIDGE_ID, BRIDGE_ID, "outbox")))
            orch.connect(Connection(Endpoint(BRIDGE_ID, BRIDGE_ID, "inbox"), Endpoint(agent_id, agent_id, "inbox")))
        for change in cfg.infrastructure_changes:
            orch.schedule_infrastructure(change)
    except Exception:
        bridge.transport.close()
        raise
    return orch


def run_scenario(cfg: ScenarioConfig) -> tuple[RunReport, RunStats]:
    orch = build_orchestrator(cfg)
    try:
        report = orch.run_until(cfg.until_us)
    finally:
        if orch.bridge is not None and not orch.bridge.state.closed:
            orch.bridge.state.closed = True
            orch.bridge.transport.close()
    records = sorted(report.messages, key=lambda r: (r.sent_at, r.msg_id))
    stats = RunStats(
        messages_sent=len(records),
        messages_delivered=sum(1 for r in records if r.delivered_at is not None),
        messages_lost=sum(1 for r in records if r.lost_at is not None),
        records=records,
        termination_time_us=report.termination_time,
        solved={a: dict(sorted(s.items())) for a, s in sorted(report.solutions.items())},
        in_flight_at_close=len(orch.bridge.state.in_flight) if orch.bridge is not None else 0,
    )
    log.info("run finished: termination=%s solved=%d sent=%d lost=%d", stats.termination_time_us,
             len(stats.solved), stats.messages_sent, stats.messages_lost)
    return report, stats
