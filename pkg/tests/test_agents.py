import json

import networkx as nx
import pytest

from cosync.agents import (
    Agent,
    AgentConfig,
    AgentKnowledge,
    Decision,
    PowerSource,
    ReceivedMessage,
    act,
    decide,
    decode_knowledge,
    encode_knowledge,
    generate_overlay,
    overlay_from_json,
    perceive,
    step_agent,
)
from cosync.errors import InvalidParams, MalformedPayload
from cosync.scenario import data_path

CFG = AgentConfig()


def msg(contrib, sender="x", at=0):
    return ReceivedMessage(sender, encode_knowledge(contrib), at)


def test_ring_lattice():
    ov = generate_overlay(50, 4, 0.0, seed=1)
    assert ov.neighbors("client0") == ["client1", "client2", "client48", "client49"]
    assert all(len(ns) == 4 for ns in ov.adjacency.values())


def test_frozen_overlay_fixture():
    frozen = overlay_from_json(json.loads(data_path("overlay_ws50.json").read_text()))
    fresh = generate_overlay(50, 4, 0.1, seed=42)
    assert frozen.adjacency == fresh.adjacency
    assert fresh.neighbors("client0") == ["client1", "client20", "client48", "client49"]


def test_overlay_symmetric_and_connected():
    ov = generate_overlay(50, 4, 0.1, seed=42)
    g = nx.Graph()
    for a, ns in ov.adjacency.items():
        for b in ns:
            assert a != b
            assert a in ov.adjacency[b]
            g.add_edge(a, b)
    assert g.number_of_nodes() == 50 and nx.is_connected(g)
    # rewiring preserves the edge count
    assert g.number_of_edges() == 100


@pytest.mark.parametrize("n, k, p", [(4, 4, 0.1), (10, 3, 0.1), (10, 0, 0.1), (10, 4, 1.5), (10, 4, -0.1)])
def test_invalid_overlay_params(n, k, p):
    with pytest.raises(InvalidParams):
        generate_overlay(n, k, p, seed=0)


def test_asymmetric_overlay_file_rejected():
    with pytest.raises(InvalidParams):
        overlay_from_json({"adjacency": {"client0": ["client1"], "client1": []}})


def test_perceive_merges_table_row():
    k = AgentKnowledge("client2", {"client2": 344}, started=True)
    out = perceive(k, [msg({"client0": 164, "client1": 354})], 344, False)
    assert out.contributions == {"client0": 164, "client1": 354, "client2": 344}


def test_perceive_empty_inbox_not_started():
    k = AgentKnowledge("client18")
    out = perceive(k, [], 344, False)
    assert out.contributions == {} and not out.started


def test_perceive_initiator_starts():
    out = perceive(AgentKnowledge("client0"), [], 164, True)
    assert out.started and out.contributions == {"client0": 164}


def test_perceive_received_value_wins():
    k = AgentKnowledge("client2", {"client0": 1, "client2": 344}, started=True)
    out = perceive(k, [msg({"client0": 164})], 344, False)
    assert out.contributions["client0"] == 164


def test_power_sources_sum_to_contribution():
    agent = Agent("client0", ["client1"], CFG)
    step_agent(agent, {"device_power": {"pv": 90}}, 0)
    step_agent(agent, {"device_power": {"household": 74}}, 0)
    step_agent(agent, {}, 50_000)
    assert agent.knowledge.contributions == {"client0": 164}


@pytest.mark.parametrize("contrib, total, found", [
    ({"client0": 164, "client1": 354, "client17": 354, "client49": 164}, 1036, True),
    ({"client0": 164, "client1": 354}, 518, False),
    ({}, 0, False),
    ({"a": 700}, 700, True),
])
def test_decide(contrib, total, found):
    assert decide(AgentKnowledge("a", contrib, True), CFG) == Decision(found, total)


def test_act_rules():
    k = AgentKnowledge("client0", {"client0": 164}, True)
    nbs = ["client1", "client20"]
    out = act(k, Decision(False, 164), nbs, None)
    assert [m.receiver for m in out] == nbs
    assert decode_knowledge(out[0].payload) == ({"client0": 164}, True)
    assert act(k, Decision(True, 900), nbs, None) == []
    assert act(k, Decision(False, 164), nbs, {"client0": 164}) == []
    assert act(AgentKnowledge("c"), Decision(False, 0), nbs, None) == []


def test_knowledge_codec():
    four = {"client0": 164, "client1": 354, "client17": 354, "client49": 164}
    assert decode_knowledge(encode_knowledge(four)) == (four, True)
    assert decode_knowledge(encode_knowledge({}, started=False)) == ({}, False)
    fifty = {f"client{i}": 344 for i in range(50)}
    assert len(encode_knowledge(fifty)) > len(encode_knowledge(four))
    assert encode_knowledge({"b": 1, "a": 2}) == b'{"contributions":{"a":2,"b":1},"started":true}'


@pytest.mark.parametrize("payload", [b"nope", b"[]", b'{"started":true}', b'{"started":1,"contributions":{}}',
                                     b'{"started":true,"contributions":{"a":-1}}', b"\xff"])
def test_bad_payloads(payload):
    with pytest.raises(MalformedPayload):
        decode_knowledge(payload)


def test_encode_rejects_negative():
    with pytest.raises(MalformedPayload):
        encode_knowledge({"a": -3})


def test_wakeups_and_buffering():
    agent = Agent("client1", ["client0"], CFG)
    _, nxt = step_agent(agent, {"device_power": {"pv": 354}}, 0)
    assert nxt == 50_000
    assert step_agent(agent, {}, 50_000) == ({}, 100_000)
    # arrives between wakeups: buffered, not processed
    out, nxt = step_agent(agent, {"inbox": [("client0", encode_knowledge({"client0": 164}))]}, 60_000)
    assert out == {} and nxt == 100_000 and not agent.knowledge.started
    out, nxt = step_agent(agent, {}, 100_000)
    assert agent.knowledge.contributions == {"client0": 164, "client1": 354}
    assert [m.receiver for m in out["outbox"]] == ["client0"]
    assert nxt == 150_000


def test_arrival_at_wakeup_waits_for_next_period():
    agent = Agent("client1", ["client0"], CFG)
    step_agent(agent, {"device_power": {"pv": 354}}, 0)
    step_agent(agent, {"inbox": [("client0", encode_knowledge({"client0": 164}))]}, 50_000)
    assert not agent.knowledge.started
    step_agent(agent, {}, 100_000)
    assert agent.knowledge.started


def test_third_wakeup_can_solve():
    a = Agent("client0", ["client1"], CFG)
    step_agent(a, {"device_power": {"pv": 164}}, 0)
    out, _ = step_agent(a, {}, 50_000)
    assert "outbox" in out
    # nothing new at the second wakeup
    assert step_agent(a, {}, 100_000) == ({}, 150_000)
    step_agent(a, {"inbox": [("client1", encode_knowledge({"client1": 354, "client2": 344}))]}, 120_000)
    out, nxt = step_agent(a, {}, 150_000)
    assert out["solution_found"]["aggregate"] == 862 and nxt is None
    assert a.solved_at == 150_000
    # solved agents stay silent
    assert step_agent(a, {"inbox": [("client1", b"{}")]}, 160_000) == ({}, None)


def test_final_state():
    a = Agent("client9", [], CFG)
    assert a.final_state() == {"started": False, "solved": False, "solved_at": None, "contributions": {}}


def test_power_source():
    pv = PowerSource("client0.pv", "client0", "pv", 90)
    assert pv.step(0, {}) == ({"client0.pv": {"power": 90}}, None)
    with pytest.raises(InvalidParams):
        PowerSource("x", "client0", "wind", 3)
    with pytest.raises(InvalidParams):
        PowerSource("x", "client0", "pv", -3)


def test_agent_config_validation():
    with pytest.raises(InvalidParams):
        AgentConfig(waiting_period=0)
    with pytest.raises(InvalidParams):
        AgentConfig(threshold=0)


def test_step_before_local_time():
    a = Agent("client0", [], CFG)
    step_agent(a, {}, 10)
    with pytest.raises(ValueError):
        step_agent(a, {}, 5)
