import random
from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from uwstack.drivers.fsm import (ActionKind, ConfigCommand, DriverEventIn, EventKind,
                                 GeneralState, ModemStatus, TxState, step, step_general,
                                 step_tx, step_tx_only)
from uwstack.drivers.packet import Packet

G, T, E, A = GeneralState, TxState, EventKind, ActionKind
PKT = Packet(1, 2, 0, payload=b"x")
CFG = ConfigCommand({"address": 3})


def ev(kind, **kw):
    if kind is E.TX_REQUEST:
        kw.setdefault("packet", PKT)
    if kind is E.CONFIG_REQUEST:
        kw.setdefault("config", CFG)
    return DriverEventIn(kind, **kw)


def kinds(actions):
    return [a.kind for a in actions]


IDLE = ModemStatus()
SENDING = ModemStatus(G.TRANSMITTING, T.TX_WAITING, PKT)
CONFIGURING = ModemStatus(G.CONFIGURING, T.TX_WAITING, CFG)


def test_status_invariant_is_enforced():
    with pytest.raises(ValueError):
        ModemStatus(G.AVAILABLE, T.TX_WAITING, None)
    with pytest.raises(ValueError):
        ModemStatus(G.AVAILABLE, T.TX_IDLE, PKT)


def test_tx_request_when_available_starts_transmitting():
    st, acts = step_general(IDLE, ev(E.TX_REQUEST))
    assert st.s is G.TRANSMITTING
    assert acts[0].kind is A.EMIT and acts[0].item is PKT


def test_delivered_while_transmitting_returns_to_available():
    st, acts = step_general(SENDING, ev(E.DEVICE_DELIVERED))
    assert st.s is G.AVAILABLE
    assert kinds(acts) == [A.NOTIFY, A.TRY_NEXT]
    assert acts[0].ok


def test_failed_while_transmitting_notifies_failure():
    st, acts = step(SENDING, ev(E.DEVICE_FAILED))
    assert st == IDLE
    assert acts[0].kind is A.NOTIFY and not acts[0].ok


def test_tx_request_while_configuring_is_deferred():
    st, acts = step_general(CONFIGURING, ev(E.TX_REQUEST))
    assert st == CONFIGURING
    assert kinds(acts) == [A.DEFER]


def test_config_request_and_done():
    st, acts = step(IDLE, ev(E.CONFIG_REQUEST))
    assert st == CONFIGURING
    assert kinds(acts) == [A.EMIT_CONFIG]
    st, acts = step(st, ev(E.CONFIG_DONE))
    assert st == IDLE
    assert kinds(acts) == [A.CONFIG_RESULT, A.TRY_NEXT]


def test_device_error_fails_configuration():
    st, acts = step(CONFIGURING, ev(E.DEVICE_ERROR, text="bad"))
    assert st == IDLE
    assert acts[0].kind is A.CONFIG_RESULT and not acts[0].ok


def test_delivered_while_available_is_a_violation():
    st, acts = step(IDLE, ev(E.DEVICE_DELIVERED, addr=2))
    assert st == IDLE
    assert kinds(acts) == [A.VIOLATION]


def test_ok_while_waiting_for_delivery_keeps_waiting():
    st, acts = step(SENDING, ev(E.DEVICE_OK))
    assert st == SENDING and acts == []


def test_ok_confirms_when_configured_as_confirmation():
    st, acts = step(SENDING, ev(E.DEVICE_OK), confirm=frozenset({E.DEVICE_OK}))
    assert st == IDLE and acts[0].ok


def test_step_tx_examples():
    got = step_tx(IDLE, ev(E.TX_REQUEST))
    assert (got.s_tx, got.outstanding) == (T.TX_WAITING, PKT)
    assert step_tx(SENDING, ev(E.DEVICE_DELIVERED)).s_tx is T.TX_IDLE
    # a second request never replaces the outstanding packet
    other = Packet(1, 2, 1)
    assert step_tx(SENDING, ev(E.TX_REQUEST, packet=other)).outstanding is PKT


def test_transport_error_releases_outstanding_and_faults():
    st, acts = step(SENDING, ev(E.TRANSPORT_ERROR))
    assert st == IDLE
    assert kinds(acts) == [A.NOTIFY, A.FAULT]
    assert not acts[0].ok


def test_receive_passes_up_in_any_state():
    for s in (IDLE, SENDING, CONFIGURING):
        got, acts = step(s, ev(E.DEVICE_RECV, packet=PKT))
        assert got == s and kinds(acts) == [A.DELIVER_UP]


def test_parse_error_is_reported_without_state_change():
    st, acts = step(SENDING, ev(E.PARSE_ERROR, raw=b"junk"))
    assert st == SENDING and kinds(acts) == [A.VIOLATION]


def test_tx_only_machine():
    st, acts = step_tx_only(IDLE, ev(E.TX_REQUEST))
    assert st.s_tx is T.TX_WAITING and st.s is G.AVAILABLE
    st2, acts = step_tx_only(st, ev(E.TX_REQUEST, packet=Packet(1, 2, 1)))
    assert st2 == st and kinds(acts) == [A.DEFER]
    st3, acts = step_tx_only(st, ev(E.DEVICE_OK))
    assert st3 == IDLE and kinds(acts) == [A.NOTIFY, A.TRY_NEXT]


# -- single-outstanding model check -----------------------------------------

ALL_KINDS = list(EventKind)


def run_model(rng: random.Random, n_events: int, stepper, confirm=None):
    """Drive a machine the way a driver does and count unconfirmed commands."""
    st = IDLE
    queue: deque = deque()
    in_flight = 0
    peak = 0
    seq = 0
    for _ in range(n_events):
        kind = rng.choice(ALL_KINDS)
        if kind is E.TX_REQUEST:
            seq += 1
            queue.append(("pkt", Packet(1, 2, seq)))
            continue
        if kind is E.CONFIG_REQUEST:
            queue.append(("cfg", ConfigCommand({"address": rng.randrange(10)})))
            continue
        pending = [DriverEventIn(kind, packet=PKT if kind is E.DEVICE_RECV else None)]
        while pending:
            e = pending.pop(0)
            st, acts = stepper(st, e) if confirm is None else stepper(st, e, confirm)
            for a in acts:
                if a.kind in (A.EMIT, A.EMIT_CONFIG):
                    in_flight += 1
                elif a.kind in (A.NOTIFY, A.CONFIG_RESULT):
                    in_flight -= 1
                elif a.kind is A.TRY_NEXT and queue:
                    what, item = queue[0]
                    k = E.TX_REQUEST if what == "pkt" else E.CONFIG_REQUEST
                    pending.append(DriverEventIn(k, packet=item if what == "pkt" else None,
                                                 config=item if what == "cfg" else None))
            peak = max(peak, in_flight)
            assert in_flight == (1 if st.outstanding is not None else 0)
        # a driver offers the head of its queue whenever it sees the modem idle
        if queue and st.s_tx is T.TX_IDLE and st.s is G.AVAILABLE:
            what, item = queue.popleft()
            k = E.TX_REQUEST if what == "pkt" else E.CONFIG_REQUEST
            st, acts = stepper(st, DriverEventIn(k, packet=item if what == "pkt" else None,
                                                 config=item if what == "cfg" else None))
            in_flight += sum(a.kind in (A.EMIT, A.EMIT_CONFIG) for a in acts)
            peak = max(peak, in_flight)
    return peak


def test_single_outstanding_over_random_sequences():
    rng = random.Random(2024)
    peak = 0
    for _ in range(10_000):
        peak = max(peak, run_model(rng, rng.randrange(1, 40), step))
    assert peak == 1


def test_single_outstanding_tx_only_machine():
    rng = random.Random(99)
    for _ in range(2_000):
        assert run_model(rng, rng.randrange(1, 40), step_tx_only) <= 1


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(ALL_KINDS), max_size=60))
def test_step_is_total_and_keeps_invariant(seq):
    s = IDLE
    for k in seq:
        s, acts = step(s, ev(k))
        assert isinstance(s, ModemStatus)
        assert isinstance(acts, list)


# -- reachability -------------------------------------------------------------

def _key(s):
    return s.s, s.s_tx, type(s.outstanding).__name__


def _successors(s):
    for k in ALL_KINDS:
        yield step(s, ev(k))[0]


def test_idle_is_reachable_from_every_reachable_state():
    seen = {_key(IDLE): IDLE}
    frontier = deque([IDLE])
    while frontier:
        s = frontier.popleft()
        for nxt in _successors(s):
            if _key(nxt) not in seen:
                seen[_key(nxt)] = nxt
                frontier.append(nxt)
    assert {(s.s, s.s_tx) for s in seen.values()} == {
        (G.AVAILABLE, T.TX_IDLE), (G.TRANSMITTING, T.TX_WAITING), (G.CONFIGURING, T.TX_WAITING)}
    for start in seen.values():
        reach = {_key(start)}
        q = deque([start])
        while q and _key(IDLE) not in reach:
            for nxt in _successors(q.popleft()):
                if _key(nxt) not in reach:
                    reach.add(_key(nxt))
                    q.append(nxt)
        assert _key(IDLE) in reach, f"deadlock at {start}"
