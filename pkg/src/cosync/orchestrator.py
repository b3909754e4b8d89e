"""Event-discrete co-simulation master.

Simulators are stepped in time order; at equal times they step in ascending
``sim_id`` order until nobody at that time has work left. Outputs travel along
connections and arrive as inputs at the same timestamp. A data input is a map
from the source (``"sim.entity"``) to its latest value; message inputs
(``inbox``) are lists of ``(sender, payload)``. Agent messages
(``outbox`` outputs) either go straight to the receiving simulator or, when the
sender is connected to a communication bridge, through the network simulator.

Before the orchestrator moves past a point in time it lets the network catch
up: it grants the network a bound equal to the next event that could feed the
bridge (``max_advance``) and integrates what comes back, adapting its own
clock to delivery times.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol

from .agents import OutboundMessage
from .bridge import Bridge, Deliver, Lost, Parked, Resume
from .errors import (
    ClockRegression,
    DeadlockDetected,
    DuplicateSimId,
    UnknownEndpoint,
)
from .kernel import SimTime, check_time
from .netsim import InfrastructureChange
from .protocol import InfoMessage, InfrastructureMessage, InitialMessage

log = logging.getLogger(__name__)

SIM_KINDS = ("agent", "power_source", "comm_bridge", "generic")


class Simulator(Protocol):
    sim_id: str
    kind: str
    entities: list[str]

    def step(self, now: SimTime, inputs: dict[str, dict[str, list]]) -> tuple[dict, Optional[SimTime]]:
        ...


@dataclass
class SimulatorHandle:
    sim_id: str
    kind: str
    sim: Any = field(repr=False)
    local_time: SimTime = 0
    next_step: Optional[SimTime] = 0


@dataclass(frozen=True)
class Endpoint:
    sim_id: str
    entity_id: str
    attr: str


@dataclass(frozen=True)
class Connection:
    src: Endpoint
    dst: Endpoint


@dataclass
class PendingInput:
    dst_sim: str
    due: SimTime
    entity_id: str
    attr: str
    value: Any
    # set for data flows; message deliveries carry their sender in ``value``
    source: Optional[str] = None


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    time_us: SimTime
    kind: str
    actor: str
    msg_id: str = ""
    detail: str = ""


@dataclass
class MessageRecord:
    msg_id: str
    sender: str
    receiver: str
    sent_at: SimTime
    delivered_at: Optional[SimTime] = None
    lost_at: Optional[SimTime] = None

    @property
    def delay_us(self) -> Optional[SimTime]:
        return None if self.delivered_at is None else self.delivered_at - self.sent_at


@dataclass
class RunReport:
    final_clock: SimTime
    termination_time: Optional[SimTime]
    solutions: dict[str, dict[str, int]]
    final_states: dict[str, Any]
    trace: list[TraceEvent]
    messages: list[MessageRecord]
    protocol_trace: list = field(default_factory=list)


class Orchestrator:
    def __init__(self, waiting_period: SimTime = 0):
        self.handles: dict[str, SimulatorHandle] = {}
        self.connections: list[Connection] = []
        self.clock: SimTime = 0
        self.until: SimTime = 0
        self.waiting_period = waiting_period
        self.pending: list[PendingInput] = []
        self.bridge: Optional[Bridge] = None
        self.trace: list[TraceEvent] = []
        self.messages: dict[str, MessageRecord] = {}
        self.solutions: dict[str, dict[str, int]] = {}
        self.termination_time: Optional[SimTime] = None
        self._msg_counters: dict[str, int] = {}
        self._outbound: list[tuple[str, str, bytes]] = []
        self._infra: list[InfrastructureChange] = []

    # -- setup -------------------------------------------------------------

    def register_simulator(self, sim: Simulator) -> SimulatorHandle:
        if sim.sim_id in self.handles:
            raise DuplicateSimId(f"simulator {sim.sim_id!r} already registered")
        kind = getattr(sim, "kind", "generic")
        if kind not in SIM_KINDS:
            raise ValueError(f"unknown simulator kind {kind!r}")
        handle = SimulatorHandle(sim.sim_id, kind, sim)
        if kind == "comm_bridge":
            if self.bridge is not None:
                raise ValueError("only one communication bridge per run")
            self.bridge = sim
            handle.next_step = None
        self.handles[sim.sim_id] = handle
        return handle

    def _check_endpoint(self, ep: Endpoint) -> None:
        handle = self.handles.get(ep.sim_id)
        if handle is None:
            raise UnknownEndpoint(f"simulator {ep.sim_id!r} is not registered")
        if ep.entity_id not in handle.sim.entities:
            raise UnknownEndpoint(f"{ep.sim_id!r} has no entity {ep.entity_id!r}")

    def connect(self, c: Connection) -> None:
        self._check_endpoint(c.src)
        self._check_endpoint(c.dst)
        if c.src == c.dst:
            raise ValueError("a connection needs two different endpoints")
        self.connections.append(c)

    def schedule_infrastructure(self, change: InfrastructureChange) -> None:
        if self.bridge is None:
            raise UnknownEndpoint("infrastructure changes need a communication bridge")
        self._infra.append(change)

    # -- time --------------------------------------------------------------

    def advance_clock_to(self, t: SimTime) -> None:
        if t < self.clock:
            raise ClockRegression(f"clock would move back from {self.clock} to {t}")
        self.clock = t

    def _upstream_of(self, sim_id: str) -> set[str]:
        feeds: dict[str, set[str]] = {}
        for c in self.connections:
            feeds.setdefault(c.dst.sim_id, set()).add(c.src.sim_id)
        seen: set[str] = set()
        stack = [sim_id]
        while stack:
            for src in feeds.get(stack.pop(), ()):
                if src not in seen:
                    seen.add(src)
                    stack.append(src)
        seen.discard(sim_id)
        return seen

    def compute_max_advance(self, for_sim: str) -> SimTime:
        """Earliest scheduled event that may (in)directly produce input for ``for_sim``."""
        upstream = self._upstream_of(for_sim)
        times = [h.next_step for sid, h in self.handles.items()
                 if sid in upstream and h.next_step is not None]
        times += [p.due for p in self.pending if p.dst_sim in upstream or p.dst_sim == for_sim]
        best = min(times, default=self.until)
        return max(self.clock, min(best, self.until))

    def _next_event_time(self) -> Optional[SimTime]:
        times = [h.next_step for h in self.handles.values() if h.next_step is not None]
        times += [p.due for p in self.pending]
        return min(times, default=None)

    # -- tracing -----------------------------------------------------------

    def _log(self, kind: str, actor: str, msg_id: str = "", detail: str = "") -> None:
        self.trace.append(TraceEvent(len(self.trace), self.clock, kind, actor, msg_id, detail))

    # -- stepping ----------------------------------------------------------

    def _eligible(self) -> list[str]:
        ready = {sid for sid, h in self.handles.items() if h.next_step == self.clock}
        ready.update(p.dst_sim for p in self.pending if p.due == self.clock)
        return sorted(ready)

    def _execute_current_time(self) -> None:
        while True:
            ready = self._eligible()
            if not ready:
                return
            self._step(ready[0])

    def _step(self, sim_id: str) -> None:
        handle = self.handles[sim_id]
        if self.clock < handle.local_time:
            raise ClockRegression(f"{sim_id} would step at {self.clock} before {handle.local_time}")
        inputs: dict[str, dict[str, list]] = {}
        keep = []
        for p in self.pending:
            if p.dst_sim != sim_id or p.due != self.clock:
                keep.append(p)
            elif p.source is None:
                inputs.setdefault(p.entity_id, {}).setdefault(p.attr, []).append(p.value)
            else:
                inputs.setdefault(p.entity_id, {}).setdefault(p.attr, {})[p.source] = p.value
        self.pending = keep
        if handle.next_step == self.clock:
            handle.next_step = None

        attrs = sorted({a for ent in inputs.values() for a in ent})
        self._log("step", sim_id, detail="+".join(attrs))
        outputs, next_step = handle.sim.step(self.clock, inputs)
        handle.local_time = self.clock
        # once a solution is reported, self-scheduled steps are dropped unchecked
        if next_step is not None and self.termination_time is None:
            check_time(next_step)
            if next_step <= self.clock:
                raise ValueError(f"{sim_id} asked to be stepped at {next_step}, not after {self.clock}")
            handle.next_step = next_step if handle.next_step is None else min(handle.next_step, next_step)
        self._route_outputs(sim_id, outputs or {})

    def _route_outputs(self, sim_id: str, outputs: dict[str, dict[str, Any]]) -> None:
        for entity_id in sorted(outputs):
            attrs = outputs[entity_id]
            for attr in sorted(attrs):
                value = attrs[attr]
                if attr == "solution_found":
                    self._record_solution(sim_id, value)
                    continue
                conns = [c for c in self.connections
                         if c.src.sim_id == sim_id and c.src.entity_id == entity_id and c.src.attr == attr]
                if attr == "outbox":
                    self._route_messages(sim_id, value, conns)
                    continue
                for c in conns:
                    self.pending.append(PendingInput(c.dst.sim_id, self.clock, c.dst.entity_id,
                                                     c.dst.attr, value, f"{sim_id}.{entity_id}"))

    def _record_solution(self, sim_id: str, value: dict) -> None:
        self.solutions[sim_id] = dict(value.get("state", {}))
        self._log("solve", sim_id, detail=str(value.get("aggregate", "")))
        if self.termination_time is None:
            self.termination_time = self.clock
            # finish the current timestamp, then no more self-scheduled steps
            for h in self.handles.values():
                if h.next_step is not None and h.next_step > self.clock:
                    h.next_step = None

    def _new_msg_id(self, sender: str) -> str:
        n = self._msg_counters.get(sender, 0)
        self._msg_counters[sender] = n + 1
        return f"{sender}-{n}"

    def _route_messages(self, sender: str, messages: list[OutboundMessage], conns: list[Connection]) -> None:
        to_bridge = any(self.handles[c.dst.sim_id].kind == "comm_bridge" for c in conns)
        direct = {c.dst.sim_id: c for c in conns if self.handles[c.dst.sim_id].kind != "comm_bridge"}
        for m in messages:
            msg_id = self._new_msg_id(sender)
            record = MessageRecord(msg_id, sender, m.receiver, self.clock)
            self.messages[msg_id] = record
            self._log("send", sender, msg_id, m.receiver)
            if m.receiver in direct:
                c = direct[m.receiver]
                record.delivered_at = self.clock
                self._log("deliver", m.receiver, msg_id, sender)
                self.pending.append(PendingInput(m.receiver, self.clock, c.dst.entity_id, c.dst.attr,
                                                 (sender, m.payload)))
            elif to_bridge:
                self._outbound.append((msg_id, sender, m.receiver, m.payload))
            else:
                raise UnknownEndpoint(f"no route from {sender!r} to {m.receiver!r}")

    # -- coupling ----------------------------------------------------------

    def _bridge_turn(self) -> None:
        bridge = self.bridge
        bound = self.compute_max_advance(bridge.sim_id)
        nxt = self._next_event_time()
        if nxt is not None:
            bound = min(bound, max(nxt, self.clock))
        for change in self._infra:
            self._log("infra", bridge.sim_id, detail=f"{change.action} {change.node} at={change.at}")
            bridge.forward_infrastructure(InfrastructureMessage(change))
        self._infra = []
        for msg_id, sender, receiver, payload in self._outbound:
            bridge.forward_info(InfoMessage(msg_id, sender, receiver, self.clock, bound,
                                            payload, len(payload)))
        self._outbound = []
        bridge.grant(bound)
        action = bridge.integrate_yield(bridge.netsim_advance())
        self._apply(action)

    def _apply(self, action) -> None:
        bridge = self.bridge
        if isinstance(action, Deliver):
            self.advance_clock_to(action.at)
            record = self.messages[action.msg_id]
            record.delivered_at = action.at
            self._log("deliver", action.receiver, action.msg_id, action.sender)
            conns = [c for c in self.connections
                     if c.src.sim_id == bridge.sim_id and c.dst.sim_id == action.receiver]
            if not conns:
                raise UnknownEndpoint(f"bridge is not connected to {action.receiver!r}")
            c = conns[0]
            self.pending.append(PendingInput(action.receiver, action.at, c.dst.entity_id, c.dst.attr,
                                             (action.sender, action.payload)))
        elif isinstance(action, Lost):
            self.advance_clock_to(action.at)
            self.messages[action.msg_id].lost_at = action.at
            self._log("lose", action.receiver, action.msg_id, action.sender)
        elif isinstance(action, Resume):
            self.advance_clock_to(action.at)
            self._log("sync", bridge.sim_id, detail=f"MAX_ADVANCE {action.at}")
        elif isinstance(action, Parked):
            self._log("sync", bridge.sim_id, detail=f"WAITING {action.at}")
            if bridge.state.in_flight:
                raise DeadlockDetected(
                    f"network idle with {len(bridge.state.in_flight)} messages unaccounted for"
                )

    def _needs_turn(self) -> bool:
        if self.bridge is None:
            return False
        return bool(self._outbound or self._infra) or self.bridge.needs_turn

    # -- main loop ---------------------------------------------------------

    def run_until(self, end: SimTime) -> RunReport:
        check_time(end)
        if not self.handles:
            raise ValueError("no simulators registered")
        self.until = end
        if self.bridge is not None and not self.bridge.state.opened:
            self.bridge.open_session(InitialMessage(end, self.waiting_period))

        while True:
            if self.clock <= end:
                self._execute_current_time()
            if self._needs_turn():
                self._bridge_turn()
                continue
            nxt = self._next_event_time()
            if nxt is None or nxt > end:
                break
            self.advance_clock_to(nxt)

        if self.bridge is not None:
            self.bridge.close()

        final_states = {}
        for sid, h in self.handles.items():
            state = getattr(h.sim, "final_state", None)
            if callable(state):
                final_states[sid] = state()
        return RunReport(
            final_clock=self.clock,
            termination_time=self.termination_time,
            solutions=dict(self.solutions),
            final_states=final_states,
            trace=list(self.trace),
            messages=list(self.messages.values()),
            protocol_trace=list(self.bridge.trace) if self.bridge is not None else [],
        )
