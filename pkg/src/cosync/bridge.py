"""Coupling layer between the orchestrator and the network simulator.

The two engines never run at the same time. The orchestrator owns the token
first; a turn of the orchestrator is any number of INFO / INFRA messages
closed by a WAITING grant whose ``sim_time`` is the bound the network may
advance to. The network then answers with exactly one message (a delivery,
a loss, MAX_ADVANCE at the bound, or WAITING when it has nothing left to
simulate) and the token returns.

:class:`NetsimEndpoint` is the network-side scheduler. The
:class:`Bridge` is the orchestrator-side simulator that keeps track of
in-flight messages and turns network answers into orchestrator actions.
"""

from __future__ import annotations

import logging
import os
import subprocess
import sys
import tempfile
import json
from dataclasses import dataclass, field
from typing import Optional, Protocol, Union

from .errors import (
    HandshakeFailure,
    ProtocolError,
    ProtocolViolation,
    UnknownMsgId,
    UnknownNode,
)
from .kernel import SimTime
from .netsim import (
    BoundReached,
    DeliveryReport,
    Idle,
    InfrastructureChange,
    NetworkEngine,
    NetworkTopology,
    build_network,
)
from .protocol import (
    PROTOCOL_VERSION,
    DeliveryMessage,
    InfoMessage,
    InfrastructureMessage,
    InitialMessage,
    ProtocolMessage,
    SyncKind,
    SynchronizationMessage,
    read_frame,
    write_frame,
)

log = logging.getLogger(__name__)

ORCHESTRATOR = "orchestrator"
NETSIM = "netsim"


# --------------------------------------------------------------------------
# network side


class NetsimEndpoint:
    """Receives protocol messages for a :class:`NetworkEngine` and answers them."""

    def __init__(self, topology: NetworkTopology):
        self.engine = NetworkEngine(topology)
        self.init: Optional[InitialMessage] = None

    def handle(self, m: ProtocolMessage) -> Optional[ProtocolMessage]:
        if self.init is None:
            if not isinstance(m, InitialMessage):
                raise ProtocolViolation(f"expected INITIAL first, got {type(m).__name__}")
            if m.protocol_version != PROTOCOL_VERSION:
                raise HandshakeFailure(
                    f"protocol version {m.protocol_version} unsupported (want {PROTOCOL_VERSION})"
                )
            self.init = m
            return SynchronizationMessage(SyncKind.WAITING, self.engine.clock)
        if isinstance(m, InitialMessage):
            raise HandshakeFailure("session already initialised")

        engine = self.engine
        if isinstance(m, InfoMessage):
            if m.sim_time < engine.clock:
                raise ProtocolViolation(
                    f"INFO {m.msg_id} at {m.sim_time} is behind the network clock {engine.clock}"
                )
            engine.send_packet(m.sender, m.receiver, m.size_bytes, m.sim_time,
                               msg_id=m.msg_id, payload=m.payload)
            engine.set_bound(min(m.max_advance, self.init.until))
            return None
        if isinstance(m, InfrastructureMessage):
            engine.apply_infrastructure_change(m.change)
            return None
        if isinstance(m, SynchronizationMessage) and m.kind is SyncKind.WAITING:
            engine.set_bound(min(m.sim_time, self.init.until))
            return self._advance()
        raise ProtocolViolation(f"network side cannot handle {type(m).__name__}")

    def _advance(self) -> ProtocolMessage:
        result = self.engine.advance()
        if isinstance(result, BoundReached):
            if result.time >= self.init.until and self.engine.in_flight:
                # simulated time is over: whatever is still travelling is lost
                result = self.engine.expire_in_flight(result.time)
            else:
                return SynchronizationMessage(SyncKind.MAX_ADVANCE, result.time)
        if isinstance(result, Idle):
            return SynchronizationMessage(SyncKind.WAITING, result.time)
        packet = result.packet
        if result.delivered:
            return DeliveryMessage(packet.msg_id, packet.src_sim, packet.dst_sim,
                                   packet.payload, result.time)
        return SynchronizationMessage(SyncKind.TRANSMISSION_ERROR, result.time, packet.msg_id)


# --------------------------------------------------------------------------
# transports


class Transport(Protocol):
    def send(self, m: ProtocolMessage) -> None: ...
    def receive(self) -> ProtocolMessage: ...
    def close(self) -> None: ...


class InProcessTransport:
    """Direct calls into a :class:`NetsimEndpoint` living in this process."""

    def __init__(self, endpoint: NetsimEndpoint):
        self.endpoint = endpoint
        self._reply: Optional[ProtocolMessage] = None

    def send(self, m: ProtocolMessage) -> None:
        reply = self.endpoint.handle(m)
        if reply is not None:
            self._reply = reply

    def receive(self) -> ProtocolMessage:
        if self._reply is None:
            raise ProtocolViolation("network side has no pending answer")
        reply, self._reply = self._reply, None
        return reply

    def close(self) -> None:
        pass


class SubprocessTransport:
    """Length-prefixed frames over the stdin/stdout pipes of a child process.

    The child runs ``python -m cosync.wire --network <file>``.
    """

    def __init__(self, topology: NetworkTopology, timeout: float = 30.0):
        fd, self._network_file = tempfile.mkstemp(prefix="cosync-net-", suffix=".json")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(topology.to_json(), fh)
        self.timeout = timeout
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "cosync.wire", "--network", self._network_file],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
        )

    def send(self, m: ProtocolMessage) -> None:
        try:
            write_frame(self.proc.stdin, m)
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"network process is gone: {self._stderr()}") from exc

    def receive(self) -> ProtocolMessage:
        m = read_frame(self.proc.stdout)
        if m is None:
            raise ProtocolError(f"network process closed the stream: {self._stderr()}")
        return m

    def _stderr(self) -> str:
        try:
            self.proc.wait(timeout=self.timeout)
            return self.proc.stderr.read().decode("utf-8", "replace").strip()
        except subprocess.TimeoutExpired:
            return "(no exit)"

    def close(self) -> None:
        try:
            if self.proc.stdin and not self.proc.stdin.closed:
                self.proc.stdin.close()
            self.proc.wait(timeout=self.timeout)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        finally:
            for stream in (self.proc.stdout, self.proc.stderr):
                if stream:
                    stream.close()
            try:
                os.unlink(self._network_file)
            except FileNotFoundError:
                pass


# --------------------------------------------------------------------------
# orchestrator side


@dataclass
class BridgeState:
    token_holder: str = ORCHESTRATOR
    current_bound: SimTime = 0
    in_flight: dict[str, InfoMessage] = field(default_factory=dict)
    opened: bool = False
    closed: bool = False
    paused: bool = False


@dataclass(frozen=True)
class Deliver:
    msg_id: str
    sender: str
    receiver: str
    payload: bytes
    at: SimTime
    sent_at: SimTime


@dataclass(frozen=True)
class Lost:
    msg_id: str
    sender: str
    receiver: str
    at: SimTime
    sent_at: SimTime


@dataclass(frozen=True)
class Resume:
    """Network reached the bound; the orchestrator runs its events there."""

    at: SimTime


@dataclass(frozen=True)
class Parked:
    """Network has nothing to simulate and waits at ``at``."""

    at: SimTime


BridgeAction = Union[Deliver, Lost, Resume, Parked]


class Bridge:
    """Orchestrator-side communication simulator."""

    kind = "comm_bridge"

    def __init__(self, transport: Transport, sim_id: str = "comm",
                 known_nodes: Optional[set[str]] = None):
        self.sim_id = sim_id
        self.entities = [sim_id]
        self.transport = transport
        self.state = BridgeState()
        self.known_nodes = known_nodes
        self.trace: list[tuple[str, ProtocolMessage]] = []
        self._last_yield_time: SimTime = 0

    # the orchestrator never steps the bridge like an ordinary simulator
    def step(self, now, inputs):
        raise ProtocolViolation("the communication bridge is driven by the protocol, not stepped")

    def _send(self, m: ProtocolMessage) -> None:
        self.trace.append((ORCHESTRATOR, m))
        self.transport.send(m)

    def _require_token(self, what: str) -> None:
        if not self.state.opened or self.state.closed:
            raise ProtocolViolation(f"{what} outside an open session")
        if self.state.token_holder != ORCHESTRATOR:
            raise ProtocolViolation(f"{what} while the network holds the token")

    def open_session(self, init: InitialMessage) -> BridgeState:
        if self.state.opened:
            raise HandshakeFailure("a session is already open on this bridge")
        self.state.opened = True
        self.until = init.until
        try:
            self._send(init)
            ack = self.transport.receive()
        except HandshakeFailure:
            raise
        except ProtocolError as exc:
            raise HandshakeFailure(str(exc)) from exc
        self.trace.append((NETSIM, ack))
        if not (isinstance(ack, SynchronizationMessage) and ack.kind is SyncKind.WAITING):
            raise HandshakeFailure(f"unexpected handshake answer {ack!r}")
        self.state.token_holder = ORCHESTRATOR
        self.state.current_bound = ack.sim_time
        return self.state

    def forward_info(self, m: InfoMessage) -> None:
        self._require_token("forward_info")
        if m.msg_id in self.state.in_flight:
            raise ProtocolViolation(f"duplicate msg_id {m.msg_id!r}")
        self._send(m)
        self.state.in_flight[m.msg_id] = m
        self.state.current_bound = m.max_advance

    def forward_infrastructure(self, m: InfrastructureMessage) -> None:
        self._require_token("forward_infrastructure")
        if self.known_nodes is not None and m.change.node not in self.known_nodes:
            raise UnknownNode(f"unknown node {m.change.node!r}")
        self._send(m)

    def grant(self, bound: SimTime) -> None:
        """Close the orchestrator turn and hand the token to the network."""
        self._require_token("grant")
        self._send(SynchronizationMessage(SyncKind.WAITING, bound))
        self.state.current_bound = bound
        self.state.token_holder = NETSIM

    def netsim_advance(self) -> ProtocolMessage:
        if self.state.token_holder != NETSIM:
            raise ProtocolViolation("netsim_advance while the orchestrator holds the token")
        y = self.transport.receive()
        self.trace.append((NETSIM, y))
        self.state.token_holder = ORCHESTRATOR
        return y

    def integrate_yield(self, y: ProtocolMessage) -> BridgeAction:
        if self.state.token_holder != ORCHESTRATOR:
            raise ProtocolViolation("integrate_yield without the token")
        t = y.delivered_at if isinstance(y, DeliveryMessage) else getattr(y, "sim_time", None)
        if t is None:
            raise ProtocolViolation(f"network sent {type(y).__name__}")
        if t > self.state.current_bound:
            raise ProtocolViolation(f"network went to {t}, past the granted bound {self.state.current_bound}")
        if t < self._last_yield_time:
            raise ProtocolViolation(f"network answer at {t} after one at {self._last_yield_time}")
        self._last_yield_time = t

        if isinstance(y, DeliveryMessage):
            info = self._resolve(y.msg_id)
            if y.delivered_at < info.sim_time:
                raise ProtocolViolation(f"{y.msg_id} delivered before it was sent")
            self.state.paused = True
            return Deliver(y.msg_id, info.sender, info.receiver, y.payload, y.delivered_at, info.sim_time)
        if isinstance(y, SynchronizationMessage):
            if y.kind is SyncKind.TRANSMISSION_ERROR:
                info = self._resolve(y.msg_id)
                self.state.paused = True
                return Lost(y.msg_id, info.sender, info.receiver, y.sim_time, info.sim_time)
            self.state.paused = False
            if y.kind is SyncKind.MAX_ADVANCE:
                return Resume(y.sim_time)
            return Parked(y.sim_time)
        raise ProtocolViolation(f"network sent {type(y).__name__}")

    def _resolve(self, msg_id: Optional[str]) -> InfoMessage:
        try:
            return self.state.in_flight.pop(msg_id)
        except KeyError:
            raise UnknownMsgId(f"unknown msg_id {msg_id!r}") from None

    @property
    def needs_turn(self) -> bool:
        return bool(self.state.in_flight) or self.state.paused

    def close(self) -> None:
        if self.state.closed:
            return
        self.state.closed = True
        self.transport.close()
        if self.state.in_flight:
            raise ProtocolViolation(
                f"session closed with {len(self.state.in_flight)} unresolved messages"
            )


def open_session(mode: str, init: InitialMessage, topology: NetworkTopology,
                 sim_id: str = "comm") -> Bridge:
    """Create the network side for ``mode`` and perform the handshake."""
    if mode in ("in_process", "netsim_inproc", "netsim"):
        transport: Transport = InProcessTransport(NetsimEndpoint(topology))
    elif mode in ("wire", "netsim_wire", "netsim-wire"):
        transport = SubprocessTransport(topology)
    else:
        raise ValueError(f"unknown bridge mode {mode!r}")
    bridge = Bridge(transport, sim_id=sim_id, known_nodes=set(topology.nodes))
    try:
        bridge.open_session(init)
    except Exception:
        transport.close()
        raise
    return bridge


def network_topology_from_file(path: str) -> NetworkTopology:
    with open(path, encoding="utf-8") as fh:
        return build_network(json.load(fh))
