"""Power-aggregation agents negotiating over a small-world overlay.

Each agent wakes once per waiting period. At a wakeup it folds the messages
buffered during the previous period into its knowledge, sums the known
contributions and either reports a solution (aggregate >= threshold) or, if
its knowledge changed, sends the full contribution map to every overlay
neighbour. Messages that arrive at the exact wakeup instant belong to the next
period, which keeps results independent of same-time step ordering.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import InvalidParams, MalformedPayload
from .kernel import SimTime, US_PER_MS

log = logging.getLogger(__name__)

DEFAULT_WAITING_PERIOD: SimTime = 50 * US_PER_MS
DEFAULT_THRESHOLD = 700
DEFAULT_INITIATOR = "client0"


def agent_name(index: int) -> str:
    return f"client{index}"


def agent_index(name: str) -> int:
    if not name.startswith("client") or not name[6:].isdigit():
        raise ValueError(f"not an agent id: {name!r}")
    return int(name[6:])


# --------------------------------------------------------------------------
# overlay


@dataclass(frozen=True)
class OverlayTopology:
    n: int
    adjacency: dict[str, list[str]]
    k: int
    p: float
    seed: Optional[int]

    def neighbors(self, agent_id: str) -> list[str]:
        return self.adjacency[agent_id]

    def to_json(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "k": self.k,
            "p": self.p,
            "seed": self.seed,
            "adjacency": {a: list(ns) for a, ns in self.adjacency.items()},
        }


def generate_overlay(n: int, k: int, p: float, seed: Optional[int] = None) -> OverlayTopology:
    """Watts-Strogatz small-world graph over agents ``client0 .. client{n-1}``.

    Start from a ring lattice where every node links to its ``k`` nearest
    neighbours, then visit each lattice edge ``(u, u+i)`` in ascending ``u``,
    then ascending ``i``, and with probability ``p`` move its far end to a
    uniformly chosen node that is neither ``u`` nor already adjacent to it.
    """
    if not (isinstance(n, int) and isinstance(k, int)):
        raise InvalidParams("n and k must be integers")
    if k < 2 or k % 2:
        raise InvalidParams(f"k must be even and >= 2, got {k}")
    if n <= k:
        raise InvalidParams(f"need n > k, got n={n}, k={k}")
    if not 0.0 <= p <= 1.0:
        raise InvalidParams(f"rewiring probability must be in [0, 1], got {p}")

    rng = random.Random(seed)
    adj: list[set[int]] = [set() for _ in range(n)]
    half = k // 2
    for u in range(n):
        for i in range(1, half + 1):
            v = (u + i) % n
            adj[u].add(v)
            adj[v].add(u)

    for u in range(n):
        for i in range(1, half + 1):
            v = (u + i) % n
            if rng.random() >= p:
                continue
            if v not in adj[u]:
                # edge already rewired away from the other side
                continue
            candidates = [w for w in range(n) if w != u and w not in adj[u]]
            if not candidates:
                continue
            w = rng.choice(candidates)
            adj[u].discard(v)
            adj[v].discard(u)
            adj[u].add(w)
            adj[w].add(u)

    adjacency = {
        agent_name(u): [agent_name(w) for w in sorted(adj[u])] for u in range(n)
    }
    return OverlayTopology(n=n, adjacency=adjacency, k=k, p=p, seed=seed)


def overlay_from_json(data: dict[str, Any]) -> OverlayTopology:
    adjacency = {a: sorted(ns, key=agent_index) for a, ns in data["adjacency"].items()}
    for a, ns in adjacency.items():
        for b in ns:
            if a == b or a not in adjacency.get(b, ()):
                raise InvalidParams(f"overlay edge {a}-{b} is not symmetric")
    return OverlayTopology(
        n=len(adjacency), adjacency=adjacency, k=data.get("k", 0), p=data.get("p", 0.0),
        seed=data.get("seed"),
    )


# --------------------------------------------------------------------------
# knowledge


@dataclass
class AgentKnowledge:
    self_id: str
    contributions: dict[str, int] = field(default_factory=dict)
    started: bool = False

    def aggregate(self) -> int:
        return sum(self.contributions.values())


def encode_knowledge(contributions: dict[str, int], started: bool = True) -> bytes:
    for agent_id, watts in contributions.items():
        if not isinstance(watts, int) or isinstance(watts, bool) or watts < 0:
            raise MalformedPayload(f"contribution of {agent_id!r} must be a non-negative int")
    doc = {"started": bool(started), "contributions": dict(contributions)}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_knowledge(payload: bytes) -> tuple[dict[str, int], bool]:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedPayload(f"knowledge payload is not JSON: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) != {"started", "contributions"}:
        raise MalformedPayload("knowledge payload must have exactly 'started' and 'contributions'")
    started, contributions = doc["started"], doc["contributions"]
    if not isinstance(started, bool) or not isinstance(contributions, dict):
        raise MalformedPayload("bad field types in knowledge payload")
    for agent_id, watts in contributions.items():
        if not isinstance(watts, int) or isinstance(watts, bool) or watts < 0:
            raise MalformedPayload(f"contribution of {agent_id!r} must be a non-negative int")
    return contributions, started


# --------------------------------------------------------------------------
# agent behaviour


@dataclass(frozen=True)
class AgentConfig:
    waiting_period: SimTime = DEFAULT_WAITING_PERIOD
    threshold: int = DEFAULT_THRESHOLD
    initiator: str = DEFAULT_INITIATOR

    def __post_init__(self):
        if self.waiting_period <= 0:
            raise InvalidParams("waiting_period must be positive")
        if self.threshold <= 0:
            raise InvalidParams("threshold must be positive")


@dataclass(frozen=True)
class Decision:
    solution_found: bool
    aggregate: int


@dataclass(frozen=True)
class OutboundMessage:
    """A message an agent hands to the coupling layer."""

    receiver: str
    payload: bytes


@dataclass(frozen=True)
class ReceivedMessage:
    sender: str
    payload: bytes
    arrived_at: SimTime


def perceive(
    knowledge: AgentKnowledge,
    inbox: list[ReceivedMessage],
    own_power: int,
    is_initiator: bool,
) -> AgentKnowledge:
    """Fold received knowledge maps and the agent's own power into its state.

    Merging is a union; on a conflicting value for the same agent the received
    value wins. The agent's own share only appears once it takes part in the
    negotiation (initiator, or after its first negotiation message).
    """
    contributions = dict(knowledge.contributions)
    started = knowledge.started or is_initiator
    for msg in inbox:
        received, _ = decode_knowledge(msg.payload)
        contributions.update(received)
        started = True
    if started:
        contributions[knowledge.self_id] = own_power
    return AgentKnowledge(knowledge.self_id, contributions, started)


def decide(knowledge: AgentKnowledge, cfg: AgentConfig) -> Decision:
    total = knowledge.aggregate()
    return Decision(total >= cfg.threshold, total)


def act(
    knowledge: AgentKnowledge,
    decision: Decision,
    neighbors: list[str],
    last_sent: Optional[dict[str, int]],
) -> list[OutboundMessage]:
    if decision.solution_found:
        return []
    if last_sent is not None and knowledge.contributions == last_sent:
        return []
    if not knowledge.started:
        return []
    payload = encode_knowledge(knowledge.contributions, started=True)
    return [OutboundMessage(n, payload) for n in neighbors]


class Agent:
    """Agent simulator stepped by the orchestrator.

    Inputs are ``device_power`` (source id to watts, one entry per attached
    power source) and ``inbox`` messages from other agents. Outputs are ``outbox`` (list of
    :class:`OutboundMessage`) and, once solved, ``solution_found``.
    """

    kind = "agent"

    def __init__(self, sim_id: str, neighbors: list[str], cfg: AgentConfig):
        self.sim_id = sim_id
        self.entities = [sim_id]
        self.neighbors = list(neighbors)
        self.cfg = cfg
        self.knowledge = AgentKnowledge(sim_id)
        self.own_power = 0
        self.power_by_source: dict[str, int] = {}
        self.buffer: list[ReceivedMessage] = []
        self.last_sent: Optional[dict[str, int]] = None
        self.solved = False
        self.solved_at: Optional[SimTime] = None
        self.next_wakeup: SimTime = cfg.waiting_period
        self.local_time: SimTime = 0
        self.aggregate_history: list[int] = []

    @property
    def is_initiator(self) -> bool:
        return self.sim_id == self.cfg.initiator

    def final_state(self) -> dict[str, Any]:
        return {
            "started": self.knowledge.started,
            "solved": self.solved,
            "solved_at": self.solved_at,
            "contributions": dict(sorted(self.knowledge.contributions.items())),
        }

    def step(self, now: SimTime, inputs: dict[str, dict[str, list]]) -> tuple[dict, Optional[SimTime]]:
        outputs, next_step = step_agent(self, inputs.get(self.sim_id, {}), now)
        return ({self.sim_id: outputs} if outputs else {}), next_step


def step_agent(agent: Agent, inputs: dict[str, list], now: SimTime) -> tuple[dict, Optional[SimTime]]:
    """Advance one agent to ``now``.

    Returns the output attribute map and the next wakeup (``None`` once solved).
    """
    if now < agent.local_time:
        raise ValueError(f"{agent.sim_id} stepped at {now} before its local time {agent.local_time}")
    agent.local_time = now
    outputs: dict[str, Any] = {}

    if agent.solved:
        return outputs, None

    if now == agent.next_wakeup:
        inbox = [m for m in agent.buffer if m.arrived_at < now]
        agent.buffer = [m for m in agent.buffer if m.arrived_at >= now]
        agent.knowledge = perceive(agent.knowledge, inbox, agent.own_power, agent.is_initiator)
        if agent.knowledge.started:
            decision = decide(agent.knowledge, agent.cfg)
            agent.aggregate_history.append(decision.aggregate)
            if decision.solution_found:
                agent.solved = True
                agent.solved_at = now
                outputs["solution_found"] = {
                    "aggregate": decision.aggregate,
                    "state": dict(agent.knowledge.contributions),
                }
                log.debug("%s solved at %d with %d W", agent.sim_id, now, decision.aggregate)
            else:
                msgs = act(agent.knowledge, decision, agent.neighbors, agent.last_sent)
                if msgs:
                    agent.last_sent = dict(agent.knowledge.contributions)
                    outputs["outbox"] = msgs
        agent.next_wakeup = now + agent.cfg.waiting_period

    # new arrivals are only looked at from the next wakeup on
    powers = inputs.get("device_power")
    if powers:
        agent.power_by_source.update(powers)
        agent.own_power = sum(agent.power_by_source.values())
    for sender, payload in inputs.get("inbox", ()):
        agent.buffer.append(ReceivedMessage(sender, payload, now))

    return outputs, (None if agent.solved else agent.next_wakeup)


class PowerSource:
    """Constant PV or household feed; emits its value once at t=0."""

    def __init__(self, sim_id: str, owner: str, kind: str, value: int):
        if kind not in ("pv", "household"):
            raise InvalidParams(f"unknown power source kind {kind!r}")
        if value < 0:
            raise InvalidParams("power source value must be non-negative")
        self.sim_id = sim_id
        self.entities = [sim_id]
        self.owner = owner
        self.source_kind = kind
        self.value = value

    kind = "power_source"

    def step(self, now: SimTime, inputs: dict) -> tuple[dict, Optional[SimTime]]:
        return {self.sim_id: {"power": self.value}}, None
