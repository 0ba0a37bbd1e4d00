"""Driver state machines.

Two machines run side by side for every modem:

* the general device state ``s``: AVAILABLE, TRANSMITTING or CONFIGURING;
* the transmission flow ``s_tx``: TX_IDLE or TX_WAITING, with the single
  outstanding command held in ``ModemStatus.outstanding``.

Configuration commands occupy the transmission flow like packets do, so
"at most one unconfirmed command" covers both.  The functions here are pure;
drivers apply them under their lock and carry out the returned actions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from .packet import Packet


class GeneralState(enum.Enum):
    AVAILABLE = "AVAILABLE"
    TRANSMITTING = "TRANSMITTING"
    CONFIGURING = "CONFIGURING"


class TxState(enum.Enum):
    TX_IDLE = "TX_IDLE"
    TX_WAITING = "TX_WAITING"


# names used by the socket drivers, which only run the transmission flow
AVAILABLE_ALIAS = TxState.TX_IDLE
BUSY_ALIAS = TxState.TX_WAITING


class EventKind(enum.Enum):
    TX_REQUEST = "TX_REQUEST"
    DEVICE_OK = "DEVICE_OK"
    DEVICE_DELIVERED = "DEVICE_DELIVERED"
    DEVICE_FAILED = "DEVICE_FAILED"
    DEVICE_RECV = "DEVICE_RECV"
    DEVICE_ERROR = "DEVICE_ERROR"
    CONFIG_REQUEST = "CONFIG_REQUEST"
    CONFIG_DONE = "CONFIG_DONE"
    TRANSPORT_ERROR = "TRANSPORT_ERROR"
    PARSE_ERROR = "PARSE_ERROR"


@dataclass
class ConfigCommand:
    """A configuration request: one or more device commands sent one at a time."""

    settings: dict
    commands: list = field(default_factory=list)
    index: int = 0
    future: Any = field(default=None, compare=False, repr=False)


@dataclass
class DriverEventIn:
    kind: EventKind
    packet: Optional[Packet] = None
    config: Optional[ConfigCommand] = None
    raw: bytes = b""
    addr: Optional[int] = None
    seq: Optional[int] = None
    text: str = ""


@dataclass(frozen=True)
class ModemStatus:
    s: GeneralState = GeneralState.AVAILABLE
    s_tx: TxState = TxState.TX_IDLE
    outstanding: Any = None

    def __post_init__(self):
        if (self.s_tx is TxState.TX_WAITING) != (self.outstanding is not None):
            raise ValueError("TX_WAITING must coincide with an outstanding command")

    @property
    def idle(self) -> bool:
        return self.s is GeneralState.AVAILABLE and self.s_tx is TxState.TX_IDLE


class ActionKind(enum.Enum):
    EMIT = "EMIT"                # send the packet to the device
    EMIT_CONFIG = "EMIT_CONFIG"  # send the next configuration command
    DEFER = "DEFER"              # keep the request queued
    NOTIFY = "NOTIFY"            # report a transmission result upward
    CONFIG_RESULT = "CONFIG_RESULT"
    TRY_NEXT = "TRY_NEXT"        # look at the TX queue again
    DELIVER_UP = "DELIVER_UP"    # pass a received packet to the stack
    VIOLATION = "VIOLATION"      # event illegal in this state; logged only
    FAULT = "FAULT"              # transport is gone


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    item: Any = None
    ok: bool = True
    reason: str = ""


DEFAULT_CONFIRM = frozenset({EventKind.DEVICE_DELIVERED, EventKind.DEVICE_FAILED})
_RESULT_KINDS = frozenset({EventKind.DEVICE_OK, EventKind.DEVICE_DELIVERED,
                           EventKind.DEVICE_FAILED, EventKind.DEVICE_ERROR})

A = ActionKind
G = GeneralState


def _confirms_packet(st: ModemStatus, ev: DriverEventIn, confirm: frozenset) -> bool:
    return (isinstance(st.outstanding, Packet)
            and (ev.kind in confirm or ev.kind is EventKind.DEVICE_ERROR))


def _confirms_config(st: ModemStatus, ev: DriverEventIn) -> bool:
    return (isinstance(st.outstanding, ConfigCommand)
            and ev.kind in (EventKind.CONFIG_DONE, EventKind.DEVICE_ERROR))


def step_general(st: ModemStatus, ev: DriverEventIn,
                 confirm: frozenset = DEFAULT_CONFIRM) -> tuple[ModemStatus, list[Action]]:
    """Advance the general state ``s``.  Total over every (state, event) pair."""
    k = ev.kind
    if k is EventKind.TX_REQUEST:
        if st.idle:
            return replace(st, s=G.TRANSMITTING), [Action(A.EMIT, ev.packet)]
        return st, [Action(A.DEFER, ev.packet)]
    if k is EventKind.CONFIG_REQUEST:
        if st.idle:
            return replace(st, s=G.CONFIGURING), [Action(A.EMIT_CONFIG, ev.config)]
        return st, [Action(A.DEFER, ev.config)]
    if k is EventKind.DEVICE_RECV:
        return st, [Action(A.DELIVER_UP, ev.packet)]
    if k is EventKind.TRANSPORT_ERROR:
        acts = []
        if isinstance(st.outstanding, Packet):
            acts.append(Action(A.NOTIFY, st.outstanding, ok=False, reason="transport"))
        elif isinstance(st.outstanding, ConfigCommand):
            acts.append(Action(A.CONFIG_RESULT, st.outstanding, ok=False, reason="transport"))
        acts.append(Action(A.FAULT, reason=ev.text or "transport"))
        return replace(st, s=G.AVAILABLE), acts
    if k is EventKind.PARSE_ERROR:
        return st, [Action(A.VIOLATION, ev.raw, reason="parse")]
    if st.s is G.TRANSMITTING and k in _RESULT_KINDS:
        if _confirms_packet(st, ev, confirm):
            ok = k in (EventKind.DEVICE_OK, EventKind.DEVICE_DELIVERED)
            return replace(st, s=G.AVAILABLE), [
                Action(A.NOTIFY, st.outstanding, ok=ok, reason=k.value),
                Action(A.TRY_NEXT)]
        if k is EventKind.DEVICE_OK:
            return st, []  # command accepted; confirmation still to come
        return st, [Action(A.VIOLATION, ev, reason=f"{k.value} not a confirmation here")]
    if st.s is G.CONFIGURING and (k is EventKind.CONFIG_DONE or k is EventKind.DEVICE_ERROR):
        if _confirms_config(st, ev):
            ok = k is EventKind.CONFIG_DONE
            return replace(st, s=G.AVAILABLE), [
                Action(A.CONFIG_RESULT, st.outstanding, ok=ok, reason=ev.text),
                Action(A.TRY_NEXT)]
    return st, [Action(A.VIOLATION, ev, reason=f"{k.value} while {st.s.value}")]


def step_tx(st: ModemStatus, ev: DriverEventIn,
            confirm: frozenset = DEFAULT_CONFIRM) -> ModemStatus:
    """Advance the transmission flow ``s_tx``; never creates a second outstanding command."""
    k = ev.kind
    if k is EventKind.TX_REQUEST or k is EventKind.CONFIG_REQUEST:
        if st.idle:
            item = ev.packet if k is EventKind.TX_REQUEST else ev.config
            return replace(st, s_tx=TxState.TX_WAITING, outstanding=item)
        return st
    if st.s_tx is TxState.TX_WAITING:
        if (k is EventKind.TRANSPORT_ERROR or _confirms_packet(st, ev, confirm)
                or _confirms_config(st, ev)):
            return replace(st, s_tx=TxState.TX_IDLE, outstanding=None)
    return st


def step(st: ModemStatus, ev: DriverEventIn,
         confirm: frozenset = DEFAULT_CONFIRM) -> tuple[ModemStatus, list[Action]]:
    """Apply both machines to one event."""
    gen, actions = step_general(st, ev, confirm)
    tx = step_tx(st, ev, confirm)
    return ModemStatus(gen.s, tx.s_tx, tx.outstanding), actions


def step_tx_only(st: ModemStatus, ev: DriverEventIn,
                 confirm: frozenset = frozenset({EventKind.DEVICE_OK})) -> tuple[ModemStatus, list[Action]]:
    """Transmission flow alone, for drivers without a general device state.

    ``s`` stays AVAILABLE throughout.
    """
    k = ev.kind
    if k is EventKind.DEVICE_RECV:
        return st, [Action(A.DELIVER_UP, ev.packet)]
    if k is EventKind.TX_REQUEST:
        if st.s_tx is TxState.TX_IDLE:
            return replace(st, s_tx=TxState.TX_WAITING, outstanding=ev.packet), [Action(A.EMIT, ev.packet)]
        return st, [Action(A.DEFER, ev.packet)]
    if k is EventKind.TRANSPORT_ERROR:
        acts = [Action(A.NOTIFY, st.outstanding, ok=False, reason="transport")] if st.outstanding else []
        return ModemStatus(), acts + [Action(A.FAULT, reason=ev.text or "transport")]
    if st.s_tx is TxState.TX_WAITING and (k in confirm or k is EventKind.DEVICE_FAILED):
        ok = k is not EventKind.DEVICE_FAILED
        return ModemStatus(), [Action(A.NOTIFY, st.outstanding, ok=ok, reason=k.value), Action(A.TRY_NEXT)]
    return st, [Action(A.VIOLATION, ev, reason=f"{k.value} while {st.s_tx.value}")]
