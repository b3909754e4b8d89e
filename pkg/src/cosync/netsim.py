"""Discrete-event communication network simulator.

Packets travel store-and-forward along a minimum-hop route. On every hop the
packet waits for its output queue, is serialized at the link data rate and
then propagates. Links that name a shared ``medium`` (a radio cell) share one
uplink queue for all transmissions towards the base station and one downlink
queue for all transmissions leaving it; every other link has its own queue
per direction.

Runtime connectivity changes (disconnect/reconnect of a node) are events in
the same future event set, so they interleave deterministically with packet
hops.
"""

from __future__ import annotations

import copy
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional, Union

from .errors import MalformedTopology, UnboundSimulator, UnknownNode
from .kernel import EventQueue, SimTime, check_time

log = logging.getLogger(__name__)

NODE_KINDS = ("client", "router", "switch", "base_station", "gateway")
IDEAL = "ideal"
FRAMING_OVERHEAD_BYTES = 60


@dataclass
class Node:
    node_id: str
    kind: str
    connected: bool = True


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    propagation_delay: SimTime = 0
    data_rate: Union[int, str] = IDEAL
    medium: Optional[str] = None

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.a, self.b)

    @property
    def ideal(self) -> bool:
        return self.data_rate == IDEAL


@dataclass(frozen=True)
class InfrastructureChange:
    action: str
    node: str
    at: SimTime

    def __post_init__(self):
        if self.action not in ("disconnect", "reconnect"):
            raise ValueError(f"unknown infrastructure action {self.action!r}")
        check_time(self.at)


@dataclass
class NetworkTopology:
    nodes: dict[str, Node]
    links: list[Link]
    client_binding: dict[str, str]
    _adj: dict[str, list[tuple[str, Link]]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._adj = {n: [] for n in self.nodes}
        for link in self.links:
            self._adj[link.a].append((link.b, link))
            self._adj[link.b].append((link.a, link))
        for n in self._adj:
            self._adj[n].sort(key=lambda item: item[0])

    def link_between(self, a: str, b: str) -> Link:
        for other, link in self._adj[a]:
            if other == b:
                return link
        raise KeyError((a, b))

    def neighbors(self, node_id: str) -> list[str]:
        return [other for other, _ in self._adj[node_id]]

    def node_of(self, sim_id: str) -> str:
        try:
            return self.client_binding[sim_id]
        except KeyError:
            raise UnboundSimulator(f"simulator {sim_id!r} has no network node binding") from None

    def to_json(self) -> dict[str, Any]:
        return {
            "nodes": [
                {"id": n.node_id, "kind": n.kind, **({} if n.connected else {"connected": False})}
                for n in self.nodes.values()
            ],
            "links": [
                {
                    "a": l.a,
                    "b": l.b,
                    "prop_delay_us": l.propagation_delay,
                    "data_rate_bps": l.data_rate,
                    **({"medium": l.medium} if l.medium else {}),
                }
                for l in self.links
            ],
            "client_binding": dict(self.client_binding),
        }


def build_network(config: dict[str, Any]) -> NetworkTopology:
    """Validate a network description and build the topology.

    ``config`` has ``nodes`` (``id``, ``kind``, optional ``connected``),
    ``links`` (``a``, ``b``, ``prop_delay_us``, ``data_rate_bps`` or
    ``"ideal"``, optional ``medium``) and ``client_binding`` (sim id to
    client node id).
    """
    if not isinstance(config, dict):
        raise MalformedTopology("network description must be an object")
    nodes: dict[str, Node] = {}
    for i, raw in enumerate(config.get("nodes", [])):
        try:
            node_id, kind = raw["id"], raw["kind"]
        except (KeyError, TypeError):
            raise MalformedTopology(f"nodes[{i}] needs 'id' and 'kind'") from None
        if kind not in NODE_KINDS:
            raise MalformedTopology(f"nodes[{i}]: unknown kind {kind!r}")
        if node_id in nodes:
            raise MalformedTopology(f"duplicate node id {node_id!r}")
        nodes[node_id] = Node(node_id, kind, bool(raw.get("connected", True)))

    links: list[Link] = []
    seen: set[frozenset[str]] = set()
    for i, raw in enumerate(config.get("links", [])):
        try:
            a, b = raw["a"], raw["b"]
        except (KeyError, TypeError):
            raise MalformedTopology(f"links[{i}] needs 'a' and 'b'") from None
        for end in (a, b):
            if end not in nodes:
                raise MalformedTopology(f"links[{i}] references unknown node {end!r}")
        if a == b:
            raise MalformedTopology(f"links[{i}] is a self-loop on {a!r}")
        if frozenset((a, b)) in seen:
            raise MalformedTopology(f"duplicate link {a!r}-{b!r}")
        seen.add(frozenset((a, b)))
        prop = raw.get("prop_delay_us", 0)
        if not isinstance(prop, int) or isinstance(prop, bool) or prop < 0:
            raise MalformedTopology(f"links[{i}]: prop_delay_us must be a non-negative int")
        rate = raw.get("data_rate_bps", IDEAL)
        if rate != IDEAL and (not isinstance(rate, int) or isinstance(rate, bool) or rate <= 0):
            raise MalformedTopology(f"links[{i}]: data_rate_bps must be a positive int or 'ideal'")
        links.append(Link(a, b, prop, rate, raw.get("medium")))

    binding = dict(config.get("client_binding", {}))
    used: set[str] = set()
    for sim_id, node_id in binding.items():
        if node_id not in nodes:
            raise MalformedTopology(f"client_binding[{sim_id!r}] references unknown node {node_id!r}")
        if nodes[node_id].kind != "client":
            raise MalformedTopology(f"client_binding[{sim_id!r}] must bind to a client node")
        if node_id in used:
            raise MalformedTopology(f"node {node_id!r} is bound to more than one simulator")
        used.add(node_id)
    return NetworkTopology(nodes, links, binding)


def route(topo: NetworkTopology, src: str, dst: str) -> Optional[list[str]]:
    """Minimum-hop path over connected nodes, or ``None`` if unreachable.

    Among equally short paths the lexicographically smallest node sequence
    wins. Client nodes only terminate paths; they never forward.
    """
    for end in (src, dst):
        if end not in topo.nodes:
            raise UnknownNode(end)
    if not (topo.nodes[src].connected and topo.nodes[dst].connected):
        return None
    if src == dst:
        return [src]

    def usable(n: str) -> bool:
        return topo.nodes[n].connected

    def forwards(n: str) -> bool:
        return n == dst or topo.nodes[n].kind != "client"

    # distances towards dst
    dist = {dst: 0}
    queue = deque([dst])
    while queue:
        cur = queue.popleft()
        if cur != dst and not forwards(cur):
            continue
        for nxt in topo.neighbors(cur):
            if nxt not in dist and usable(nxt):
                dist[nxt] = dist[cur] + 1
                if nxt != src:
                    queue.append(nxt)
    if src not in dist:
        return None

    path = [src]
    cur = src
    while cur != dst:
        want = dist[cur] - 1
        cur = min(n for n in topo.neighbors(cur)
                  if dist.get(n) == want and (n == dst or forwards(n)) and usable(n))
        path.append(cur)
    return path


def serialization_time(link: Link, size_bytes: int) -> SimTime:
    if link.ideal:
        return 0
    bits_us = size_bytes * 8 * 1_000_000
    return -(-bits_us // link.data_rate)


def transmission_delay(link: Link, size_bytes: int) -> SimTime:
    """Propagation plus serialization, rounded up to whole microseconds."""
    return link.propagation_delay + serialization_time(link, size_bytes)


# --------------------------------------------------------------------------
# engine


@dataclass
class Packet:
    msg_id: str
    src_sim: str
    dst_sim: str
    src_node: str
    dst_node: str
    size_bytes: int
    sent_at: SimTime
    payload: bytes = b""
    path: Optional[list[str]] = None
    hop: int = 0
    delivered_at: Optional[SimTime] = None
    lost_at: Optional[SimTime] = None
    status: str = "in_transit"
    min_path_delay: SimTime = 0
    _event: Optional[int] = field(default=None, repr=False)

    @property
    def wire_size(self) -> int:
        return self.size_bytes + FRAMING_OVERHEAD_BYTES


@dataclass(frozen=True)
class DeliveryReport:
    packet: Packet
    time: SimTime
    delivered: bool


@dataclass(frozen=True)
class BoundReached:
    time: SimTime


@dataclass(frozen=True)
class Idle:
    time: SimTime


_SEND, _HOP, _INFRA, _SYNC = "send", "hop", "infra", "sync"


class NetworkEngine:
    """Single-threaded network simulator with a bounded ``advance`` loop.

    ``advance`` runs the future event set until the first delivery or loss
    (returned as a :class:`DeliveryReport`, leaving the engine paused at that
    time), until the synchronization bound is reached (:class:`BoundReached`),
    or, when nothing but the bound is pending, parks at the bound and returns
    :class:`Idle`.
    """

    def __init__(self, topology: NetworkTopology):
        # connectivity flips at runtime; keep the caller's topology pristine
        self.topology = copy.deepcopy(topology)
        self.fes = EventQueue()
        self.clock: SimTime = 0
        self.packets: dict[str, Packet] = {}
        self.in_flight: dict[str, Packet] = {}
        self._busy: dict[Any, SimTime] = {}
        self._sync_id: Optional[int] = None
        self.bound: Optional[SimTime] = None
        self._auto_ids = 0
        self._pending_infra = 0

    # -- inputs ------------------------------------------------------------

    def send_packet(self, src_sim: str, dst_sim: str, size_bytes: int, at: SimTime,
                    msg_id: Optional[str] = None, payload: bytes = b"") -> str:
        src_node = self.topology.node_of(src_sim)
        dst_node = self.topology.node_of(dst_sim)
        if msg_id is None:
            msg_id = f"pkt{self._auto_ids}"
            self._auto_ids += 1
        if msg_id in self.packets:
            raise ValueError(f"duplicate msg_id {msg_id!r}")
        packet = Packet(msg_id, src_sim, dst_sim, src_node, dst_node, size_bytes, at, payload)
        packet._event = self.fes.schedule(at, src_node, (_SEND, msg_id), now=self.clock)
        self.packets[msg_id] = packet
        self.in_flight[msg_id] = packet
        return msg_id

    def apply_infrastructure_change(self, change: InfrastructureChange) -> None:
        if change.node not in self.topology.nodes:
            raise UnknownNode(f"unknown node {change.node!r}")
        self.fes.schedule(change.at, change.node, (_INFRA, change), now=self.clock)
        self._pending_infra += 1

    def set_bound(self, bound: SimTime) -> None:
        """Install ``bound`` as the only pending synchronization point."""
        if bound < self.clock:
            raise ValueError(f"bound {bound} is behind the network clock {self.clock}")
        if self._sync_id is not None:
            self.fes.cancel(self._sync_id)
        self._sync_id = self.fes.schedule(bound, "sync", (_SYNC, bound), now=self.clock)
        self.bound = bound

    # -- execution ---------------------------------------------------------

    def _has_work(self) -> bool:
        pending = len(self.fes) - (1 if self._sync_id in self.fes else 0)
        return pending > 0

    def advance(self) -> Union[DeliveryReport, BoundReached, Idle]:
        if self.bound is None:
            raise RuntimeError("advance() without a synchronization bound")
        while True:
            if not self._has_work():
                if self._sync_id is not None:
                    self.fes.cancel(self._sync_id)
                    self._sync_id = None
                self.clock = max(self.clock, self.bound)
                return Idle(self.clock)
            event = self.fes.pop_next()
            kind = event.payload[0]
            if kind == _SYNC:
                if self.fes.peek_time() == event.time:
                    # the bound fires only after everything else at its timestamp
                    self._sync_id = self.fes.schedule(event.time, "sync", event.payload, now=self.clock)
                    continue
                self._sync_id = None
                self.clock = event.time
                return BoundReached(event.time)
            self.clock = event.time
            report = self._execute(event)
            if report is not None:
                return report

    def run_network_until(self, bound: SimTime) -> list[DeliveryReport]:
        """Run to ``bound`` collecting every delivery and loss on the way."""
        self.set_bound(bound)
        reports = []
        while True:
            result = self.advance()
            if isinstance(result, DeliveryReport):
                reports.append(result)
                continue
            return reports

    def expire_in_flight(self, at: SimTime) -> Optional[DeliveryReport]:
        """Declare the oldest in-flight packet lost (end of simulated time)."""
        if not self.in_flight:
            return None
        packet = next(iter(self.in_flight.values()))
        if packet._event is not None:
            self.fes.cancel(packet._event)
        return self._lose(packet, max(at, self.clock))

    # -- internals ---------------------------------------------------------

    def _execute(self, event) -> Optional[DeliveryReport]:
        kind, arg = event.payload
        if kind == _INFRA:
            self._pending_infra -= 1
            self._apply_change(arg)
            return None
        packet = self.packets[arg]
        if kind == _SEND:
            path = route(self.topology, packet.src_node, packet.dst_node)
            if path is None:
                log.debug("%s unreachable at send time %d", packet.msg_id, event.time)
                return self._lose(packet, event.time)
            packet.path = path
            packet.min_path_delay = sum(
                self.topology.link_between(a, b).propagation_delay for a, b in zip(path, path[1:])
            )
            packet.hop = 0
        return self._at_hop(packet, event.time)

    def _apply_change(self, change: InfrastructureChange) -> None:
        node = self.topology.nodes[change.node]
        target = change.action == "reconnect"
        if node.connected == target:
            log.info("%s of %s at %d is a no-op", change.action, change.node, change.at)
            return
        node.connected = target
        log.debug("%s %s at %d", change.action, change.node, change.at)

    def _at_hop(self, packet: Packet, now: SimTime) -> Optional[DeliveryReport]:
        path = packet.path
        nodes = self.topology.nodes
        if packet.hop == len(path) - 1:
            if nodes[path[-1]].connected:
                return self._deliver(packet, now)
            return self._lose(packet, now)
        if not all(nodes[n].connected for n in path[packet.hop:]):
            return self._lose(packet, now)
        here, nxt = path[packet.hop], path[packet.hop + 1]
        link = self.topology.link_between(here, nxt)
        start = now
        tx = serialization_time(link, packet.wire_size)
        if not link.ideal:
            key = self._queue_key(link, here, nxt)
            start = max(now, self._busy.get(key, 0))
            self._busy[key] = start + tx
        packet.hop += 1
        packet._event = self.fes.schedule(start + tx + link.propagation_delay, nxt,
                                          (_HOP, packet.msg_id), now=now)
        return None

    def _queue_key(self, link: Link, sender: str, receiver: str):
        if link.medium:
            direction = "down" if self.topology.nodes[sender].kind == "base_station" else "up"
            return (link.medium, direction)
        return (sender, receiver)

    def _deliver(self, packet: Packet, now: SimTime) -> DeliveryReport:
        packet.status = "delivered"
        packet.delivered_at = now
        packet._event = None
        del self.in_flight[packet.msg_id]
        return DeliveryReport(packet, now, True)

    def _lose(self, packet: Packet, now: SimTime) -> DeliveryReport:
        packet.status = "lost"
        packet.lost_at = now
        packet._event = None
        del self.in_flight[packet.msg_id]
        return DeliveryReport(packet, now, False)

    # -- stats -------------------------------------------------------------

    def counts(self) -> dict[str, int]:
        sent = len(self.packets)
        delivered = sum(1 for p in self.packets.values() if p.status == "delivered")
        lost = sum(1 for p in self.packets.values() if p.status == "lost")
        return {"sent": sent, "delivered": delivered, "lost": lost, "in_flight": len(self.in_flight)}
