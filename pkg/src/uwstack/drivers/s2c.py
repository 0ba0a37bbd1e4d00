"""S2C command-mode dialect: formatting, incremental parsing and the driver.

Wire grammar (every line ends with CRLF; ``<raw>`` is exactly ``<len>``
bytes and may itself contain CR or LF)::

    driver -> modem   AT*SENDIM,<len>,<dst>,<ack|noack>,<raw>
                      AT*SEND,<len>,<dst>,<raw>
                      AT!AL<addr>
    modem -> driver   OK | ERROR <text>
                      DELIVEREDIM,<dst> | FAILEDIM,<dst>
                      DELIVERED,<dst>   | FAILED,<dst>
                      RECVIM,<len>,<src>,<dst>,<ack|noack>,<raw>
                      RECV,<len>,<src>,<dst>,<raw>

``OK`` answers a command as soon as the modem accepts it, except for
``SENDIM ... noack`` where it is sent once the frame has left the modem.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

from .base import ModemDriver
from .fsm import ConfigCommand, DriverEventIn, EventKind
from .packet import FormatError, Packet, TrafficClass

log = logging.getLogger(__name__)

CRLF = b"\r\n"
IM_MAX = 64
BURST_MAX = 512
MAX_RAW = 4096        # largest <len> either side will wait for
MAX_LINE = 256        # longest text line before the parser gives up on it
MAX_HEADER = 64


class S2CMode(enum.Enum):
    IM_ACK = "im-ack"
    IM_NOACK = "im-noack"
    BURST = "burst"


def s2c_format(p: Packet, mode, max_im: int = IM_MAX, max_burst: int = BURST_MAX) -> bytes:
    mode = S2CMode(mode)
    n = len(p.payload)
    if mode is S2CMode.BURST:
        if n > max_burst:
            raise FormatError(f"burst payload {n} B exceeds {max_burst} B")
        return b"AT*SEND,%d,%d," % (n, p.dst) + p.payload + CRLF
    if n > max_im:
        raise FormatError(f"IM payload {n} B exceeds {max_im} B")
    flag = b"ack" if mode is S2CMode.IM_ACK else b"noack"
    return b"AT*SENDIM,%d,%d,%s," % (n, p.dst, flag) + p.payload + CRLF


def format_recv(p: Packet, ack: bool = True) -> bytes:
    """Notification a modem emits when ``p`` arrives (used by the emulator)."""
    if p.tclass is TrafficClass.BURST:
        return b"RECV,%d,%d,%d," % (len(p.payload), p.src, p.dst) + p.payload + CRLF
    flag = b"ack" if ack else b"noack"
    return (b"RECVIM,%d,%d,%d,%s," % (len(p.payload), p.src, p.dst, flag)
            + p.payload + CRLF)


# -- generic incremental scanner ---------------------------------------------

@dataclass(frozen=True)
class _Binary:
    prefix: bytes
    fields: int      # comma-terminated header fields after the prefix, <len> first


def _scan(buf: bytes, binaries: tuple, on_line, on_binary, max_raw: int = MAX_RAW):
    """Split ``buf`` into text lines and length-delimited binary records.

    Returns ``(events, residual)``.  Malformed input yields PARSE_ERROR events
    and the scanner skips to the next CRLF.
    """
    events = []
    pos = 0
    n = len(buf)
    while pos < n:
        rec = None
        waiting = False
        for b in binaries:
            if buf.startswith(b.prefix, pos):
                rec = b
                break
            if n - pos < len(b.prefix) and b.prefix.startswith(buf[pos:]):
                waiting = True
        if rec is not None:
            start = pos + len(rec.prefix)
            fields = []
            cur = start
            bad = False
            for _ in range(rec.fields):
                comma = buf.find(b",", cur, min(n, start + MAX_HEADER))
                cut = buf.find(b"\r", cur, comma if comma >= 0 else min(n, start + MAX_HEADER))
                if cut >= 0 or (comma < 0 and n - start >= MAX_HEADER):
                    bad = True
                    break
                if comma < 0:
                    break
                fields.append(buf[cur:comma])
                cur = comma + 1
            if not bad and len(fields) < rec.fields:
                return events, buf[pos:]
            length = None
            if not bad:
                try:
                    length = int(fields[0])
                except ValueError:
                    bad = True
                else:
                    bad = not 0 <= length <= max_raw or not fields[0].isdigit()
            if bad:
                pos = _resync(buf, pos, events)
                continue
            end = cur + length
            if n < end + 2:
                return events, buf[pos:]
            if buf[end:end + 2] != CRLF:
                pos = _resync(buf, pos, events)
                continue
            ev = on_binary(rec.prefix, fields, buf[cur:end])
            if ev is None:
                events.append(DriverEventIn(EventKind.PARSE_ERROR, raw=buf[pos:end + 2]))
            else:
                events.append(ev)
            pos = end + 2
            continue
        if waiting:
            return events, buf[pos:]
        eol = buf.find(CRLF, pos)
        if eol < 0:
            if n - pos > MAX_LINE:
                # keep a trailing CR: it may pair with an LF in the next read
                keep = 1 if buf.endswith(b"\r") else 0
                events.append(DriverEventIn(EventKind.PARSE_ERROR, raw=buf[pos:n - keep]))
                return events, buf[n - keep:]
            return events, buf[pos:]
        line = buf[pos:eol]
        pos = eol + 2
        if not line:
            continue
        ev = on_line(line)
        events.append(ev if ev is not None else DriverEventIn(EventKind.PARSE_ERROR, raw=line))
    return events, b""


def _resync(buf: bytes, pos: int, events: list) -> int:
    eol = buf.find(CRLF, pos)
    stop = len(buf) if eol < 0 else eol + 2
    events.append(DriverEventIn(EventKind.PARSE_ERROR, raw=buf[pos:stop]))
    return stop


def _int(b: bytes):
    if not b.isdigit():
        raise ValueError(b)
    return int(b)


# -- modem -> driver ---------------------------------------------------------

_NOTIFY_BIN = (_Binary(b"RECVIM,", 4), _Binary(b"RECV,", 3))
_CONFIRMS = {
    b"DELIVEREDIM": (EventKind.DEVICE_DELIVERED, "IM"),
    b"FAILEDIM": (EventKind.DEVICE_FAILED, "IM"),
    b"DELIVERED": (EventKind.DEVICE_DELIVERED, "BURST"),
    b"FAILED": (EventKind.DEVICE_FAILED, "BURST"),
}


def _notify_line(line: bytes):
    if line == b"OK":
        return DriverEventIn(EventKind.DEVICE_OK)
    if line == b"ERROR" or line.startswith(b"ERROR "):
        return DriverEventIn(EventKind.DEVICE_ERROR, text=line[6:].decode("latin-1"))
    head, sep, tail = line.partition(b",")
    if sep and head in _CONFIRMS:
        try:
            addr = _int(tail)
        except ValueError:
            return None
        kind, cls = _CONFIRMS[head]
        return DriverEventIn(kind, addr=addr, text=cls)
    return None


def _notify_binary(prefix: bytes, fields: list, raw: bytes):
    try:
        if prefix == b"RECVIM,":
            _, src, dst = (_int(f) for f in fields[:3])
            if fields[3] not in (b"ack", b"noack"):
                return None
            p = Packet(src, dst, tclass=TrafficClass.IM, payload=raw)
        else:
            _, src, dst = (_int(f) for f in fields)
            p = Packet(src, dst, tclass=TrafficClass.BURST, payload=raw)
    except ValueError:
        return None
    return DriverEventIn(EventKind.DEVICE_RECV, packet=p, addr=src)


def s2c_parse(stream: bytes):
    """Parse modem output.  Returns ``(events, residual)``; feed the residual
    back in front of the next read."""
    return _scan(bytes(stream), _NOTIFY_BIN, _notify_line, _notify_binary)


# -- driver -> modem (used by the emulator) ----------------------------------

@dataclass
class S2CCommand:
    op: str                 # "SENDIM", "SEND", "SETADDR", "GETADDR", "BAD"
    dst: int = 0
    ack: bool = False
    payload: bytes = b""
    value: int = 0
    raw: bytes = b""


_CMD_BIN = (_Binary(b"AT*SENDIM,", 3), _Binary(b"AT*SEND,", 2))


def _cmd_line(line: bytes):
    if line.startswith(b"AT!AL"):
        try:
            return S2CCommand("SETADDR", value=_int(line[5:]))
        except ValueError:
            return S2CCommand("BAD", raw=line)
    if line == b"AT?AL":
        return S2CCommand("GETADDR")
    return S2CCommand("BAD", raw=line)


def _cmd_binary(prefix: bytes, fields: list, raw: bytes):
    try:
        dst = _int(fields[1])
    except ValueError:
        return S2CCommand("BAD", raw=prefix)
    if prefix == b"AT*SENDIM,":
        if fields[2] not in (b"ack", b"noack"):
            return S2CCommand("BAD", raw=prefix)
        return S2CCommand("SENDIM", dst=dst, ack=fields[2] == b"ack", payload=raw)
    return S2CCommand("SEND", dst=dst, payload=raw)


def s2c_parse_commands(stream: bytes):
    """Parse driver commands.  Returns ``(commands, residual)``.

    Unparseable input comes back as ``S2CCommand("BAD")``.
    """
    out, residual = _scan(bytes(stream), _CMD_BIN, _cmd_line, _cmd_binary)
    cmds = [S2CCommand("BAD", raw=e.raw) if isinstance(e, DriverEventIn) else e for e in out]
    return cmds, residual


class S2CInterpreter:
    """Stateful wrapper around :func:`s2c_parse` that keeps the residual."""

    def __init__(self):
        self.residual = b""
        self.parse_errors = 0

    def feed(self, data: bytes) -> list:
        events, self.residual = s2c_parse(self.residual + data)
        self.parse_errors += sum(e.kind is EventKind.PARSE_ERROR for e in events)
        return events


# -- driver ------------------------------------------------------------------

CONFIG_KEYS = ("address",)


class S2CDriver(ModemDriver):
    """Stop-and-wait driver for S2C modems in command mode.

    ``confirm_on`` chooses what ends the wait for an IM sent with ack:
    ``"delivered"`` (DELIVEREDIM/FAILEDIM) or ``"ok"``.  Burst packets are
    always confirmed by DELIVERED/FAILED, IMs without ack by OK.
    """

    kind = "s2c"

    def __init__(self, endpoint, scheduler=None, addr: int = 1, mode="im-ack",
                 confirm_on: str = "delivered", max_im: int = IM_MAX,
                 max_burst: int = BURST_MAX, tx_timeout: float = 60.0, **kw):
        self.mode = S2CMode(mode)
        if confirm_on not in ("delivered", "ok"):
            raise ValueError("confirm_on must be 'delivered' or 'ok'")
        self.confirm_on = confirm_on
        self.max_im = max_im
        self.max_burst = max_burst
        max_payload = max_burst if self.mode is S2CMode.BURST else max_im
        super().__init__(endpoint, scheduler=scheduler, addr=addr,
                         max_payload=max_payload, tx_timeout=tx_timeout, **kw)
        if self.mode is S2CMode.IM_NOACK or (self.mode is S2CMode.IM_ACK and confirm_on == "ok"):
            self.confirm = frozenset({EventKind.DEVICE_OK, EventKind.DEVICE_FAILED})
        self.interpreter = S2CInterpreter()

    def encode_packet(self, p: Packet) -> bytes:
        return s2c_format(p, self.mode, self.max_im, self.max_burst)

    def config_commands(self, settings: dict) -> list:
        cmds = []
        for key, value in settings.items():
            if key not in CONFIG_KEYS:
                raise KeyError(f"unknown S2C setting {key!r}")
            if key == "address":
                cmds.append(b"AT!AL%d\r\n" % int(value))
        return cmds

    def on_config_applied(self, cfg: ConfigCommand):
        if "address" in cfg.settings:
            self.addr = int(cfg.settings["address"])

    def parse(self, data: bytes) -> list:
        return self.interpreter.feed(data)
