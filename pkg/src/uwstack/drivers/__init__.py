"""Modem drivers: packet types, state machines and the three driver families."""

from .ahoi import AhoiDriver, ahoi_decode, ahoi_encode
from .base import DriverNote, ModemDriver
from .csa import CsaDriver, csa_decode, csa_encode
from .fsm import (ActionKind, DriverEventIn, EventKind, GeneralState, ModemStatus,
                  TxState, step, step_general, step_tx)
from .packet import (BROADCAST, BackpressureError, FormatError, Packet,
                     PacketSizeError, TrafficClass)
from .s2c import S2CDriver, S2CMode, s2c_format, s2c_parse

DRIVER_KINDS = {"s2c": S2CDriver, "ahoi": AhoiDriver, "csa": CsaDriver}


def make_driver(kind: str, endpoint, scheduler=None, **params) -> ModemDriver:
    try:
        cls = DRIVER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown driver kind {kind!r}") from None
    return cls(endpoint, scheduler=scheduler, **params)


__all__ = [
    "AhoiDriver", "ActionKind", "BROADCAST", "BackpressureError", "CsaDriver",
    "DRIVER_KINDS", "DriverEventIn", "DriverNote", "EventKind", "FormatError",
    "GeneralState", "ModemDriver", "ModemStatus", "Packet", "PacketSizeError",
    "S2CDriver", "S2CMode", "TrafficClass", "TxState", "ahoi_decode", "ahoi_encode",
    "csa_decode", "csa_encode", "make_driver", "s2c_format", "s2c_parse", "step",
    "step_general", "step_tx",
]
