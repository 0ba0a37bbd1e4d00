"""Emulated S2C and AHOI modems speaking the driver dialects over a connector."""

from __future__ import annotations

import logging
import threading
from collections import Counter
from typing import Optional

from .. import connectors
from ..connectors import Connection, ConnectorError, EndOfStream
from ..drivers import ahoi
from ..drivers.ahoi import AhoiFrame, FrameType
from ..drivers.packet import Packet, TrafficClass
from ..drivers.s2c import s2c_parse_commands, format_recv

log = logging.getLogger(__name__)


class EmulatedModem:
    """Service loop shared by both emulators: one client, one reader thread."""

    kind = "modem"

    def __init__(self, endpoint, medium, addr: int, ctrl_latency: float = 0.0,
                 aliases=()):
        self.endpoint = endpoint
        self.medium = medium
        self.addr = addr
        # extra addresses this modem also receives for (gateway role)
        self.aliases = tuple(aliases)
        self.ctrl_latency = ctrl_latency
        self.counters: Counter = Counter()
        self.conn: Optional[Connection] = None
        self._lock = threading.RLock()
        self._wlock = threading.Lock()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._residual = b""
        self.device_path: Optional[str] = None

    def __repr__(self):
        return f"<{type(self).__name__} addr={self.addr} {self.endpoint}>"

    def start(self):
        if self.conn is None:
            ep = self.endpoint
            if isinstance(ep, str):
                ep = connectors.Endpoint.parse(ep)
            if isinstance(ep, Connection):
                self.conn = ep
            elif ep.kind == "serial" and ep.path == "pty":
                # keep the slave end open so the master never reads EIO between clients
                self.conn, self._pty_slave = connectors.open_pty_pair(ep.baud)
                self.device_path = self._pty_slave.endpoint.path
            else:
                self.conn = connectors.open(ep)
        self.medium.attach(self.addr, self)
        for a in self.aliases:
            self.medium.attach(a, self)
        self._thread = threading.Thread(target=self._serve, name=f"emu-{self.kind}-{self.addr}", daemon=True)
        self._thread.start()
        return self

    @property
    def port(self) -> Optional[int]:
        return getattr(self.conn, "port", None)

    def stop(self):
        self._stop.set()
        self.medium.detach(self.addr)
        for a in self.aliases:
            self.medium.detach(a)
        if self.conn is not None:
            self.conn.close()
        if getattr(self, "_pty_slave", None) is not None:
            self._pty_slave.close()
        if self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join(2.0)

    def _serve(self):
        conn = self.conn
        while not self._stop.is_set():
            if not conn.wait_readable(0.05):
                continue
            try:
                data = conn.read_available(65536)
            except EndOfStream:
                return
            if not data:
                continue
            if self.ctrl_latency > 0:
                self.medium.timeline.schedule(self._feed, self.ctrl_latency, data)
            else:
                self._feed(data)

    def _feed(self, data: bytes):
        raise NotImplementedError

    def _send(self, data: bytes):
        if self.ctrl_latency > 0:
            self.medium.timeline.schedule(self._write, self.ctrl_latency, data)
        else:
            self._write(data)

    def _write(self, data: bytes):
        conn = self.conn
        if conn is None or conn.closed or (hasattr(conn, "connected") and not conn.connected):
            self.counters["undeliverable"] += 1
            return
        try:
            with self._wlock:
                conn.write_bytes(data)
        except ConnectorError:
            self.counters["undeliverable"] += 1

    def _readdress(self, new: int):
        self.medium.readdress(self.addr, new, self)
        self.addr = new


class S2CEmulator(EmulatedModem):
    """Command-mode modem: one instant message in flight, burst frames buffered.

    A second SENDIM while one is unconfirmed is answered ``ERROR busy``;
    burst frames queue in the modem buffer (``burst_buffer`` deep) and leave
    back to back.
    """

    kind = "s2c"

    def __init__(self, endpoint, medium, addr: int, ctrl_latency: float = 0.0,
                 aliases=(), burst_buffer: int = 64):
        super().__init__(endpoint, medium, addr, ctrl_latency, aliases)
        self.burst_buffer = burst_buffer
        self.im_busy = False
        self.burst_pending = 0

    @property
    def busy(self) -> bool:
        return self.im_busy or self.burst_pending > 0

    def _feed(self, data: bytes):
        cmds, self._residual = s2c_parse_commands(self._residual + data)
        for cmd in cmds:
            self.handle(cmd)

    def handle(self, cmd):
        with self._lock:
            op = cmd.op
            self.counters[op] += 1
            if op == "SENDIM":
                if self.busy:
                    self.counters["busy_rejects"] += 1
                    self._send(b"ERROR busy\r\n")
                    return
                self.im_busy = True
                p = Packet(self.addr, cmd.dst, tclass=TrafficClass.IM, payload=cmd.payload)
                meta = {"ack": cmd.ack}
                if cmd.ack:
                    self._send(b"OK\r\n")
                    self.medium.deliver(self.addr, p, TrafficClass.IM, meta=meta,
                                        on_result=lambda ok, d=cmd.dst: self._im_result(ok, d))
                else:
                    self.medium.deliver(self.addr, p, TrafficClass.IM, meta=meta, on_sent=self._im_sent)
            elif op == "SEND":
                if self.im_busy:
                    self.counters["busy_rejects"] += 1
                    self._send(b"ERROR busy\r\n")
                    return
                if self.burst_pending >= self.burst_buffer:
                    self._send(b"ERROR buffer full\r\n")
                    return
                self.burst_pending += 1
                self._send(b"OK\r\n")
                p = Packet(self.addr, cmd.dst, tclass=TrafficClass.BURST, payload=cmd.payload)
                self.medium.deliver(self.addr, p, TrafficClass.BURST,
                                    on_result=lambda ok, d=cmd.dst: self._burst_result(ok, d))
            elif op == "SETADDR":
                if self.busy:
                    self._send(b"ERROR busy\r\n")
                    return
                try:
                    self._readdress(cmd.value)
                except ValueError:
                    self._send(b"ERROR address in use\r\n")
                    return
                self._send(b"OK\r\n")
            elif op == "GETADDR":
                self._send(b"%d\r\n" % self.addr)
            else:
                self._send(b"ERROR syntax\r\n")

    def _im_result(self, ok: bool, dst: int):
        with self._lock:
            self.im_busy = False
            self._send(b"%s,%d\r\n" % (b"DELIVEREDIM" if ok else b"FAILEDIM", dst))

    def _im_sent(self):
        with self._lock:
            self.im_busy = False
            self._send(b"OK\r\n")

    def _burst_result(self, ok: bool, dst: int):
        with self._lock:
            self.burst_pending -= 1
            self._send(b"%s,%d\r\n" % (b"DELIVERED" if ok else b"FAILED", dst))

    def on_frame(self, p: Packet, meta: dict):
        self.counters["rx"] += 1
        self._send(format_recv(p, ack=meta.get("ack", True)))


class AhoiEmulator(EmulatedModem):
    """AHOI modem peer on a serial line or in-process pipe.

    A DATA frame is put on the medium and answered with an OK frame once it
    has been sent.  If it asked for an acknowledgement and reached its
    destination, an ACK frame follows one acknowledgement time later.
    Frames arriving while a transmission is in progress are dropped.
    """

    kind = "ahoi"

    def __init__(self, endpoint, medium, addr: int, ctrl_latency: float = 0.0, aliases=()):
        super().__init__(endpoint, medium, addr, ctrl_latency, aliases)
        self.transmitting = False

    @property
    def crc_errors(self) -> int:
        return self.counters["crc_errors"]

    def _feed(self, data: bytes):
        items, self._residual = ahoi.decode_frames(self._residual + data)
        for it in items:
            if isinstance(it, AhoiFrame):
                self.handle(it)
            elif it.text == "crc":
                self.counters["crc_errors"] += 1
            else:
                self.counters["framing_errors"] += 1

    def handle(self, fr: AhoiFrame):
        with self._lock:
            if fr.type == FrameType.DATA:
                if self.transmitting:
                    self.counters["busy_drops"] += 1
                    return
                self.transmitting = True
                self.counters["tx"] += 1
                p = Packet(self.addr, fr.dst, fr.seq, TrafficClass.IM, fr.payload)
                want_ack = bool(fr.flags & ahoi.FLAG_ACK_REQUEST)
                self.medium.deliver(
                    self.addr, p, TrafficClass.IM, meta={"flags": fr.flags},
                    on_sent=lambda seq=fr.seq: self._sent(seq),
                    on_result=(lambda ok, f=fr: self._acked(ok, f)) if want_ack else None)
            elif fr.type == FrameType.CONFIG:
                if len(fr.payload) == 2 and fr.payload[0] == ahoi.CONFIG_ADDRESS and not self.transmitting:
                    try:
                        self._readdress(fr.payload[1])
                    except ValueError:
                        return
                    self._send(ahoi.encode_frame(AhoiFrame(self.addr, self.addr, FrameType.OK, 0, fr.seq)))
            else:
                self.counters["ignored"] += 1

    def _sent(self, seq: int):
        with self._lock:
            self.transmitting = False
            self._send(ahoi.encode_frame(AhoiFrame(self.addr, self.addr, FrameType.OK, 0, seq)))

    def _acked(self, ok: bool, fr: AhoiFrame):
        if ok:
            self.counters["acks"] += 1
            self._send(ahoi.encode_frame(AhoiFrame(fr.dst, self.addr, FrameType.ACK, 0, fr.seq)))

    def on_frame(self, p: Packet, meta: dict):
        self.counters["rx"] += 1
        fr = AhoiFrame(p.src, p.dst, FrameType.DATA, meta.get("flags", 0), p.seq, p.payload)
        self._send(ahoi.encode_frame(fr))


def s2c_emulator_serve(ep, m, addr: int, **kw) -> S2CEmulator:
    return S2CEmulator(ep, m, addr, **kw).start()


def ahoi_emulator_serve(ep, m, addr: int, **kw) -> AhoiEmulator:
    return AhoiEmulator(ep, m, addr, **kw).start()
