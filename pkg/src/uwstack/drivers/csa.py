"""Client-server (socket) driver: an end-to-end link with no device in between.

TCP messages are ``len:u32 | src:u16 dst:u16 seq:u32 | payload`` where
``len`` counts the bytes after the prefix.  UDP carries the same header
and payload, one packet per datagram, without the prefix.
"""

from __future__ import annotations

import struct
import time

from ..connectors import Endpoint
from .base import ModemDriver
from .fsm import DriverEventIn, EventKind, step_tx_only
from .packet import FormatError, Packet, TrafficClass

HEADER = struct.Struct(">HHI")
PREFIX = struct.Struct(">I")
UDP_MAX = 65507 - HEADER.size
TCP_MAX = 65507
MAX_MESSAGE = 1 << 20


def csa_encode(p: Packet, udp: bool = False) -> bytes:
    limit = UDP_MAX if udp else TCP_MAX
    if len(p.payload) > limit:
        raise FormatError(f"CSA payload {len(p.payload)} B exceeds {limit} B")
    body = HEADER.pack(p.src & 0xFFFF, p.dst & 0xFFFF, p.seq & 0xFFFFFFFF) + p.payload
    if udp:
        return body
    return PREFIX.pack(len(body)) + body


def _packet(body: bytes) -> Packet:
    src, dst, seq = HEADER.unpack_from(body)
    return Packet(src, dst, seq, TrafficClass.DATAGRAM, body[HEADER.size:])


def csa_decode(stream: bytes, udp: bool = False):
    """Decode packets.  Returns ``(packets, residual)``.

    In UDP mode ``stream`` is one datagram.  Invalid lengths are reported as
    PARSE_ERROR events and the rest of the buffer is dropped, since a
    length-prefixed stream cannot be resynchronised.
    """
    stream = bytes(stream)
    if udp:
        if len(stream) < HEADER.size:
            return [DriverEventIn(EventKind.PARSE_ERROR, raw=stream, text="short")], b""
        return [_packet(stream)], b""
    out = []
    pos = 0
    n = len(stream)
    while n - pos >= PREFIX.size:
        (length,) = PREFIX.unpack_from(stream, pos)
        if length < HEADER.size or length > MAX_MESSAGE:
            out.append(DriverEventIn(EventKind.PARSE_ERROR, raw=stream[pos:], text="length"))
            return out, b""
        end = pos + PREFIX.size + length
        if end > n:
            break
        out.append(_packet(stream[pos + PREFIX.size:end]))
        pos = end
    return out, stream[pos:]


class CsaInterpreter:
    def __init__(self, udp: bool):
        self.udp = udp
        self.residual = b""

    def feed(self, data: bytes) -> list:
        items, self.residual = csa_decode(self.residual + data, self.udp)
        return [DriverEventIn(EventKind.DEVICE_RECV, packet=x, addr=x.src) if isinstance(x, Packet) else x
                for x in items]


class CsaDriver(ModemDriver):
    """Socket driver using only the transmission flow machine.

    A packet goes out as soon as the flow is TX_IDLE; the local write
    completing is its confirmation.  There are no retransmissions.
    """

    kind = "csa"
    use_general_state = False

    def __init__(self, endpoint, scheduler=None, addr: int = 0, max_payload=None, **kw):
        ep = endpoint.endpoint if hasattr(endpoint, "endpoint") else endpoint
        if isinstance(ep, str):
            ep = Endpoint.parse(ep)
        self.udp = ep.kind == "udp"
        if max_payload is None:
            max_payload = UDP_MAX if self.udp else TCP_MAX
        super().__init__(endpoint, scheduler=scheduler, addr=addr, max_payload=max_payload, **kw)
        self.confirm = frozenset({EventKind.DEVICE_OK})
        self.interpreter = CsaInterpreter(self.udp)

    def step(self, st, ev):
        return step_tx_only(st, ev, self.confirm)

    def encode_packet(self, p: Packet) -> bytes:
        return csa_encode(p, self.udp)

    def parse(self, data: bytes) -> list:
        return self.interpreter.feed(data)

    def after_write(self, item):
        self._apply(DriverEventIn(EventKind.DEVICE_OK))

    def config_commands(self, settings: dict) -> list:
        unknown = set(settings) - {"address"}
        if unknown:
            raise KeyError(f"unknown CSA settings {sorted(unknown)}")
        if "address" in settings:
            self.addr = int(settings["address"])
        return []
