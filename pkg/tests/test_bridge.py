import pytest

from cosync.bridge import (
    NETSIM,
    ORCHESTRATOR,
    Bridge,
    Deliver,
    InProcessTransport,
    Lost,
    NetsimEndpoint,
    Parked,
    Resume,
    open_session,
)
from cosync.errors import HandshakeFailure, ProtocolError, ProtocolViolation, UnknownMsgId, UnknownNode
from cosync.netsim import InfrastructureChange
from cosync.protocol import (
    DeliveryMessage,
    InfoMessage,
    InfrastructureMessage,
    InitialMessage,
    SynchronizationMessage,
    SyncKind,
)
from helpers import coupling_sequence, ping_setup, two_client_network

INIT = InitialMessage(1_000_000, 50_000)


def info(msg_id, t, bound, sender="client0", receiver="client1"):
    return InfoMessage(msg_id, sender, receiver, t, bound, b"hi", 2)


@pytest.fixture
def bridge():
    b = open_session("netsim_inproc", INIT, two_client_network())
    yield b
    b.transport.close()


def test_open_session_parks_netsim_at_zero(bridge):
    assert bridge.state.opened and bridge.state.token_holder == ORCHESTRATOR
    assert bridge.trace[1] == (NETSIM, SynchronizationMessage(SyncKind.WAITING, 0))
    assert bridge.transport.endpoint.engine.clock == 0


def test_second_open_session_fails(bridge):
    with pytest.raises(HandshakeFailure):
        bridge.open_session(INIT)


def test_version_mismatch():
    with pytest.raises(HandshakeFailure):
        open_session("netsim_inproc", InitialMessage(10, 5, protocol_version=99), two_client_network())


def test_endpoint_rejects_second_initial():
    ep = NetsimEndpoint(two_client_network())
    ep.handle(INIT)
    with pytest.raises(HandshakeFailure):
        ep.handle(INIT)


def test_endpoint_requires_initial_first():
    ep = NetsimEndpoint(two_client_network())
    with pytest.raises(ProtocolViolation):
        ep.handle(SynchronizationMessage(SyncKind.WAITING, 3))


def test_forward_info_schedules_send_and_sync(bridge):
    bridge.forward_info(info("a", 1000, 5000))
    events = bridge.transport.endpoint.engine.fes.events()
    assert [(e.time, e.payload[0]) for e in events] == [(1000, "send"), (5000, "sync")]


def test_second_info_supersedes_bound(bridge):
    bridge.forward_info(info("a", 1000, 5000))
    bridge.grant(5000)
    assert bridge.integrate_yield(bridge.netsim_advance()) == Resume(5000)
    bridge.forward_info(info("b", 5000, 14_000, "client1", "client0"))
    syncs = [e.time for e in bridge.transport.endpoint.engine.fes.events() if e.payload[0] == "sync"]
    assert syncs == [14_000]


def test_forward_without_token(bridge):
    bridge.grant(10)
    with pytest.raises(ProtocolViolation):
        bridge.forward_info(info("a", 0, 10))
    with pytest.raises(ProtocolViolation):
        bridge.grant(20)


def test_advance_without_token(bridge):
    with pytest.raises(ProtocolViolation):
        bridge.netsim_advance()


def test_netsim_yields(bridge):
    bridge.forward_info(info("a", 1000, 5000))
    bridge.grant(5000)
    assert bridge.integrate_yield(bridge.netsim_advance()) == Resume(5000)
    bridge.grant(14_000)
    action = bridge.integrate_yield(bridge.netsim_advance())
    assert action == Deliver("a", "client0", "client1", b"hi", 8000, 1000)
    assert bridge.state.in_flight == {}
    bridge.grant(14_000)
    assert bridge.integrate_yield(bridge.netsim_advance()) == Parked(14_000)


def test_transmission_error_on_disconnect(bridge):
    bridge.forward_infrastructure(InfrastructureMessage(InfrastructureChange("disconnect", "client1", 10)))
    bridge.forward_info(info("b", 20, 50))
    bridge.grant(50)
    action = bridge.integrate_yield(bridge.netsim_advance())
    assert action == Lost("b", "client0", "client1", 20, 20)
    assert not bridge.state.in_flight


def test_infra_unknown_node(bridge):
    with pytest.raises(UnknownNode):
        bridge.forward_infrastructure(InfrastructureMessage(InfrastructureChange("disconnect", "ghost", 1)))


def test_unknown_msg_id(bridge):
    bridge.grant(100)
    bridge.netsim_advance()
    with pytest.raises(UnknownMsgId):
        bridge.integrate_yield(DeliveryMessage("zzz", "a", "b", b"", 50))


def test_yield_past_bound_is_violation(bridge):
    bridge.grant(100)
    bridge.netsim_advance()
    with pytest.raises(ProtocolViolation):
        bridge.integrate_yield(SynchronizationMessage(SyncKind.MAX_ADVANCE, 101))


def test_close_with_in_flight_fails(bridge):
    bridge.forward_info(info("a", 0, 10))
    with pytest.raises(ProtocolViolation):
        bridge.close()


def test_bridge_is_not_stepped(bridge):
    with pytest.raises(ProtocolViolation):
        bridge.step(0, {})


def test_in_flight_expires_at_until():
    b = open_session("netsim_inproc", InitialMessage(5000, 50_000), two_client_network())
    b.forward_info(info("a", 1000, 5000))
    b.grant(5000)
    assert b.integrate_yield(b.netsim_advance()) == Lost("a", "client0", "client1", 5000, 1000)
    b.grant(5000)
    assert b.integrate_yield(b.netsim_advance()) == Parked(5000)
    b.close()


def test_in_process_transport_needs_a_reply():
    t = InProcessTransport(NetsimEndpoint(two_client_network()))
    with pytest.raises(ProtocolViolation):
        t.receive()


def test_wire_session_matches_in_process():
    traces = {}
    for mode in ("netsim_inproc", "netsim_wire"):
        orch, *_ = ping_setup(mode)
        traces[mode] = orch.run_until(20_000).protocol_trace
    assert traces["netsim_inproc"] == traces["netsim_wire"]
    assert len(traces["netsim_wire"]) > 6


def test_wire_process_is_reaped():
    b = open_session("netsim_wire", INIT, two_client_network())
    proc = b.transport.proc
    b.close()
    assert proc.poll() is not None


def test_wire_error_surfaces():
    b = open_session("netsim_wire", INIT, two_client_network())
    # the network side rejects an INFO dated before its clock
    b.grant(100)
    b.netsim_advance()
    b.forward_info(info("a", 10, 200))
    b.grant(200)
    with pytest.raises(ProtocolError) as exc:
        b.netsim_advance()
    assert "ProtocolViolation" in str(exc.value)
    b.state.closed = True
    b.transport.close()


def token_turns_ok(trace):
    """Every orchestrator turn ends with INITIAL or a WAITING grant and gets one answer."""
    for (o1, m1), (o2, _) in zip(trace, trace[1:]):
        if o1 == NETSIM and o2 == NETSIM:
            return False
        if o1 == ORCHESTRATOR and o2 == NETSIM:
            if not (isinstance(m1, InitialMessage)
                    or (isinstance(m1, SynchronizationMessage) and m1.kind is SyncKind.WAITING)):
                return False
    return trace[-1][0] == NETSIM


def test_token_alternates_in_ping_trace():
    orch, *_ = ping_setup()
    report = orch.run_until(20_000)
    assert token_turns_ok(report.protocol_trace)
    seq = coupling_sequence(report.protocol_trace)
    assert [o for o, _ in seq] == [ORCHESTRATOR, NETSIM, ORCHESTRATOR, NETSIM, NETSIM, NETSIM]


def test_unknown_mode():
    with pytest.raises(ValueError):
        open_session("carrier_pigeon", INIT, two_client_network())


def test_bridge_kind():
    assert Bridge.kind == "comm_bridge"
