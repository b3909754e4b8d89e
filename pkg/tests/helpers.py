"""Shared test fixtures: scripted simulators and the two-client ping setup."""

from cosync.agents import OutboundMessage
from cosync.bridge import NETSIM, ORCHESTRATOR, open_session
from cosync.kernel import ms
from cosync.netsim import build_network
from cosync.orchestrator import Connection, Endpoint, Orchestrator
from cosync.protocol import InitialMessage, SynchronizationMessage, SyncKind


class ScriptedSim:
    """Steps at fixed times; at some of them sends one message."""

    kind = "generic"

    def __init__(self, sim_id, times, sends=None):
        self.sim_id = sim_id
        self.entities = [sim_id]
        self.times = sorted(times)
        self.sends = dict(sends or {})
        self.steps = []
        self.received = []

    def step(self, now, inputs):
        self.steps.append(now)
        for sender, payload in inputs.get(self.sim_id, {}).get("inbox", ()):
            self.received.append((now, sender, payload))
        out = {}
        if now in self.sends:
            receiver, payload = self.sends.pop(now)
            out = {self.sim_id: {"outbox": [OutboundMessage(receiver, payload)]}}
        later = [t for t in self.times if t > now]
        return out, (later[0] if later else None)


def two_client_network(prop_us=3500, rate="ideal"):
    return build_network({
        "nodes": [{"id": "client0", "kind": "client"}, {"id": "client1", "kind": "client"},
                  {"id": "switch", "kind": "switch"}],
        "links": [{"a": "client0", "b": "switch", "prop_delay_us": prop_us, "data_rate_bps": rate},
                  {"a": "client1", "b": "switch", "prop_delay_us": prop_us, "data_rate_bps": rate}],
        "client_binding": {"client0": "client0", "client1": "client1"},
    })


def ping_setup(mode="netsim_inproc", until=ms(20)):
    """client0 sends at 1 ms and steps again at 14 ms; client1 replies at 5 ms."""
    orch = Orchestrator(waiting_period=ms(50))
    c0 = ScriptedSim("client0", [ms(1), ms(14)], {ms(1): ("client1", b"ping")})
    c1 = ScriptedSim("client1", [ms(5)], {ms(5): ("client0", b"pong")})
    bridge = open_session(mode, InitialMessage(until, ms(50)), two_client_network())
    for sim in (c0, c1, bridge):
        orch.register_simulator(sim)
    for c in (c0, c1):
        orch.handles[c.sim_id].next_step = c.times[0]
        orch.connect(Connection(Endpoint(c.sim_id, c.sim_id, "outbox"), Endpoint("comm", "comm", "outbox")))
        orch.connect(Connection(Endpoint("comm", "comm", "inbox"), Endpoint(c.sim_id, c.sim_id, "inbox")))
    return orch, c0, c1, bridge


def coupling_sequence(trace):
    """Protocol messages minus the handshake and the orchestrator's token grants."""
    rows = []
    for origin, m in trace[2:]:
        if origin == ORCHESTRATOR and isinstance(m, SynchronizationMessage) and m.kind is SyncKind.WAITING:
            continue
        rows.append((origin, m))
    return rows


__all__ = ["ScriptedSim", "two_client_network", "ping_setup", "coupling_sequence", "NETSIM", "ORCHESTRATOR"]
