"""AHOI serial framing and driver.

Frame layout (DLE framing, every 0x10 in the body is doubled)::

    10 02 | src dst type flags seq len | payload | crc16 (BE) | 10 03

The CRC is CRC-16/CCITT-FALSE over header and payload, before stuffing.
"""

from __future__ import annotations

import binascii
import enum
from dataclasses import dataclass
from typing import Optional

from .base import ModemDriver
from .fsm import ConfigCommand, DriverEventIn, EventKind
from .packet import FormatError, Packet, TrafficClass

DLE, STX, ETX = 0x10, 0x02, 0x03
START = bytes((DLE, STX))
END = bytes((DLE, ETX))
HEADER_LEN = 6
CRC_LEN = 2
OVERHEAD = HEADER_LEN + CRC_LEN
MAX_PAYLOAD = 32
MAX_BODY = HEADER_LEN + 255 + CRC_LEN

FLAG_ACK_REQUEST = 0x01
CONFIG_ADDRESS = 0x01

DEFAULT_BITRATE = 260.0


class FrameType(enum.IntEnum):
    DATA = 0x00
    ACK = 0x01
    OK = 0x02       # local modem: command executed (frame sent / setting applied)
    CONFIG = 0x03


def crc16_ccitt_false(data: bytes) -> int:
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass
class AhoiFrame:
    src: int
    dst: int
    type: int = FrameType.DATA
    flags: int = 0
    seq: int = 0
    payload: bytes = b""

    def body(self) -> bytes:
        if len(self.payload) > 255:
            raise FormatError("AHOI payload longer than 255 bytes")
        head = bytes((self.src & 0xFF, self.dst & 0xFF, int(self.type) & 0xFF,
                      self.flags & 0xFF, self.seq & 0xFF, len(self.payload)))
        content = head + bytes(self.payload)
        return content + crc16_ccitt_false(content).to_bytes(2, "big")


def stuff(body: bytes) -> bytes:
    return START + body.replace(b"\x10", b"\x10\x10") + END


def encode_frame(frame: AhoiFrame) -> bytes:
    return stuff(frame.body())


def ahoi_encode(p: Packet, ack_request: bool = False, max_payload: int = MAX_PAYLOAD) -> bytes:
    if len(p.payload) > max_payload:
        raise FormatError(f"AHOI payload {len(p.payload)} B exceeds {max_payload} B")
    flags = FLAG_ACK_REQUEST if ack_request else 0
    return encode_frame(AhoiFrame(p.src, p.dst, FrameType.DATA, flags, p.seq, p.payload))


def _error(raw: bytes, why: str) -> DriverEventIn:
    return DriverEventIn(EventKind.PARSE_ERROR, raw=bytes(raw), text=why)


def _finish(body: bytearray, raw: bytes):
    if len(body) < OVERHEAD:
        return _error(raw, "short")
    content, crc = bytes(body[:-CRC_LEN]), int.from_bytes(body[-CRC_LEN:], "big")
    if content[5] != len(content) - HEADER_LEN:
        return _error(raw, "length")
    if crc16_ccitt_false(content) != crc:
        return _error(raw, "crc")
    return AhoiFrame(content[0], content[1], content[2], content[3], content[4], content[HEADER_LEN:])


def decode_frames(buf: bytes):
    """Split a byte stream into frames.

    Returns ``(items, residual)`` where items are :class:`AhoiFrame` or
    PARSE_ERROR events (``text`` is ``"crc"``, ``"length"``, ``"framing"``
    or ``"short"``).  Bytes before a start marker are skipped.
    """
    buf = bytes(buf)
    items = []
    pos = 0
    n = len(buf)
    while True:
        start = buf.find(START, pos)
        if start < 0:
            # a trailing DLE may be the first half of the next start marker
            return items, (buf[-1:] if buf.endswith(b"\x10") and n > pos else b"")
        i = start + 2
        body = bytearray()
        restart = None
        while True:
            j = buf.find(b"\x10", i)
            if j < 0:
                body += buf[i:]
                if len(body) > MAX_BODY:
                    items.append(_error(buf[start:], "framing"))
                    return items, b""
                return items, buf[start:]
            body += buf[i:j]
            if j + 1 >= n:
                if len(body) > MAX_BODY:
                    items.append(_error(buf[start:j], "framing"))
                    return items, buf[j:]
                return items, buf[start:]
            c = buf[j + 1]
            if c == DLE:
                body.append(DLE)
                i = j + 2
            elif c == ETX:
                items.append(_finish(body, buf[start:j + 2]))
                pos = j + 2
                break
            else:
                # DLE STX starts a new frame; anything else is a framing error
                items.append(_error(buf[start:j], "framing"))
                restart = j if c == STX else j + 2
                break
            if len(body) > MAX_BODY:
                items.append(_error(buf[start:i], "framing"))
                restart = i
                break
        if restart is not None:
            pos = restart


def frame_event(fr: AhoiFrame) -> DriverEventIn:
    if fr.type == FrameType.DATA:
        p = Packet(fr.src, fr.dst, fr.seq, TrafficClass.IM, fr.payload)
        return DriverEventIn(EventKind.DEVICE_RECV, packet=p, addr=fr.src, seq=fr.seq)
    if fr.type == FrameType.ACK:
        return DriverEventIn(EventKind.DEVICE_DELIVERED, addr=fr.src, seq=fr.seq)
    if fr.type == FrameType.OK:
        return DriverEventIn(EventKind.DEVICE_OK, seq=fr.seq)
    return DriverEventIn(EventKind.PARSE_ERROR, raw=encode_frame(fr), text="unexpected type")


def ahoi_decode(stream: bytes):
    """Decode modem output into driver events.  Returns ``(events, residual)``."""
    items, residual = decode_frames(stream)
    return [frame_event(x) if isinstance(x, AhoiFrame) else x for x in items], residual


def frame_airtime(payload_len: int, bitrate: float = DEFAULT_BITRATE) -> float:
    return (payload_len + OVERHEAD) * 8.0 / bitrate


class AhoiInterpreter:
    def __init__(self):
        self.residual = b""
        self.crc_errors = 0
        self.framing_errors = 0

    def feed(self, data: bytes) -> list:
        events, self.residual = ahoi_decode(self.residual + data)
        out = []
        for ev in events:
            if ev.kind is EventKind.PARSE_ERROR:
                if ev.text == "crc":
                    self.crc_errors += 1
                else:
                    self.framing_errors += 1
                continue
            out.append(ev)
        return out


class AhoiDriver(ModemDriver):
    """One-command-at-a-time driver for AHOI modems on a serial line.

    Without ``ack_request`` a packet is confirmed by the modem's OK frame
    once it has been sent; with it, by the remote ACK frame, retrying up to
    ``retries`` times after ``2 * (airtime + 2 * propagation + 100 ms)``.
    """

    kind = "ahoi"

    def __init__(self, endpoint, scheduler=None, addr: int = 1, max_payload: int = MAX_PAYLOAD,
                 ack_request: bool = False, retries: int = 0, bitrate: float = DEFAULT_BITRATE,
                 max_range: float = 150.0, sound_speed: float = 1500.0, **kw):
        if not 0 <= retries <= 3:
            raise ValueError("retries must be within 0..3")
        kw.setdefault("tx_timeout", None)
        super().__init__(endpoint, scheduler=scheduler, addr=addr, max_payload=max_payload, **kw)
        self.ack_request = ack_request
        self.retries = retries
        self.bitrate = bitrate
        self.max_range = max_range
        self.sound_speed = sound_speed
        if ack_request:
            self.confirm = frozenset({EventKind.DEVICE_DELIVERED, EventKind.DEVICE_FAILED})
        else:
            self.confirm = frozenset({EventKind.DEVICE_OK, EventKind.DEVICE_FAILED})
        self.interpreter = AhoiInterpreter()
        self._cfg_seq = 0

    @property
    def crc_errors(self) -> int:
        return self.interpreter.crc_errors

    def encode_packet(self, p: Packet) -> bytes:
        return ahoi_encode(p, self.ack_request, self.max_payload)

    def parse(self, data: bytes) -> list:
        return self.interpreter.feed(data)

    def ack_timeout(self, p: Packet) -> float:
        prop = self.max_range / self.sound_speed
        return 2.0 * (frame_airtime(len(p.payload), self.bitrate) + 2 * prop + 0.1)

    def timeout_for(self, p: Packet) -> Optional[float]:
        if self.ack_request:
            return self.ack_timeout(p)
        if self.tx_timeout:
            return self.tx_timeout
        return 4.0 * frame_airtime(len(p.payload), self.bitrate) + 2.0

    def on_timeout(self, p: Packet):
        tries = p.meta.get("tries", 0)
        if self.ack_request and tries < self.retries:
            p.meta["tries"] = tries + 1
            self.counters["retransmissions"] += 1
            self._emit(p)
            self._arm_timer(p)
            return
        self._apply(DriverEventIn(EventKind.DEVICE_FAILED, text="timeout"))

    def filter_event(self, ev: DriverEventIn) -> Optional[DriverEventIn]:
        out = self.status.outstanding
        if ev.kind in (EventKind.DEVICE_OK, EventKind.DEVICE_DELIVERED):
            if isinstance(out, Packet) and ev.seq is not None and ev.seq != (out.seq & 0xFF):
                self.counters["stale_confirmations"] += 1
                return None
        return self._config_progress(ev)

    def config_commands(self, settings: dict) -> list:
        cmds = []
        for key, value in settings.items():
            if key != "address":
                raise KeyError(f"unknown AHOI setting {key!r}")
            self._cfg_seq = (self._cfg_seq + 1) & 0xFF
            fr = AhoiFrame(self.addr, self.addr, FrameType.CONFIG, 0, self._cfg_seq,
                           bytes((CONFIG_ADDRESS, int(value) & 0xFF)))
            cmds.append(encode_frame(fr))
        return cmds

    def on_config_applied(self, cfg: ConfigCommand):
        if "address" in cfg.settings:
            self.addr = int(cfg.settings["address"])
