"""Driving emulated modems without the stack, paced only by device confirmations.

This is the reference against which the stack's overhead is measured: the
sender writes dialect commands straight to the modem and issues the next
one as soon as the modem confirms the previous one.  In buffered burst mode
it keeps the modem's burst buffer full instead.
"""

from __future__ import annotations

import threading
import time
from typing import Optional

from .. import connectors
from ..connectors import EndOfStream
from ..drivers import ahoi, s2c
from ..drivers.fsm import EventKind
from ..drivers.packet import Packet
from ..netstack.node import packet_id
from .metrics import TxRxLog


class _Receiver(threading.Thread):
    """Reads the destination modem's notifications and timestamps arrivals."""

    def __init__(self, conn, decode):
        super().__init__(daemon=True, name="direct-rx")
        self.conn = conn
        self.decode = decode
        self.arrivals: list[tuple[Packet, float]] = []
        self.cond = threading.Condition()
        self.stopping = threading.Event()

    def run(self):
        residual = b""
        while not self.stopping.is_set():
            if not self.conn.wait_readable(0.05):
                continue
            try:
                data = self.conn.read_available(65536)
            except EndOfStream:
                return
            now = time.monotonic()
            if not data:
                continue
            events, residual = self.decode(residual + data)
            with self.cond:
                for ev in events:
                    if ev.kind is EventKind.DEVICE_RECV:
                        self.arrivals.append((ev.packet, now))
                self.cond.notify_all()

    def wait_count(self, n: int, timeout: float) -> bool:
        with self.cond:
            return self.cond.wait_for(lambda: len(self.arrivals) >= n, timeout)


class _Confirmations:
    """Collects device events from the sending modem's connection."""

    def __init__(self, conn, decode):
        self.conn = conn
        self.decode = decode
        self.residual = b""
        self.pending: list = []

    def next_event(self, kinds, timeout: float):
        deadline = time.monotonic() + timeout
        while True:
            for i, ev in enumerate(self.pending):
                if ev.kind in kinds:
                    return self.pending.pop(i)
            left = deadline - time.monotonic()
            if left <= 0:
                return None
            if not self.conn.wait_readable(min(left, 0.05)):
                continue
            data = self.conn.read_available(65536)
            if data:
                events, self.residual = self.decode(self.residual + data)
                self.pending.extend(events)


def _ahoi_decode(buf: bytes):
    return ahoi.ahoi_decode(buf)


def run_direct(kind: str, tx_endpoint, rx_endpoint, packets: list[Packet], mode: str = "im-ack",
               buffered: bool = False, buffer_depth: int = 64, run: int = 0,
               timeout: float = 120.0, settle: float = 5.0,
               max_burst: int = s2c.BURST_MAX) -> TxRxLog:
    """Send ``packets`` through the modem at ``tx_endpoint`` and time their arrival at
    ``rx_endpoint``.  Returns a merged log like the stack runs produce."""
    tx = connectors.open(tx_endpoint)
    rx = connectors.open(rx_endpoint)
    if kind == "s2c":
        decode = s2c.s2c_parse
        smode = s2c.S2CMode(mode)
        if smode is s2c.S2CMode.BURST:
            confirm = {EventKind.DEVICE_DELIVERED, EventKind.DEVICE_FAILED}
        elif smode is s2c.S2CMode.IM_ACK:
            confirm = {EventKind.DEVICE_DELIVERED, EventKind.DEVICE_FAILED}
        else:
            confirm = {EventKind.DEVICE_OK, EventKind.DEVICE_FAILED}

        def encode(p):
            return s2c.s2c_format(p, smode, max_burst=max_burst)
    elif kind == "ahoi":
        decode = _ahoi_decode
        confirm = {EventKind.DEVICE_OK}

        def encode(p):
            return ahoi.ahoi_encode(p, ack_request=False, max_payload=len(p.payload))
    else:
        raise ValueError(f"no direct mode for {kind!r}")
    receiver = _Receiver(rx, decode)
    receiver.start()
    device = _Confirmations(tx, decode)
    tx_recs = []
    try:
        in_device = 0
        for p in packets:
            if buffered:
                while in_device >= buffer_depth:
                    if device.next_event(confirm, timeout) is None:
                        raise TimeoutError("modem never confirmed a buffered frame")
                    in_device -= 1
            t_enq = time.monotonic()
            tx.write_bytes(encode(p))
            tx_recs.append({"pkt": packet_id(p.src, p), "t_enq": t_enq, "t_sent": t_enq,
                            "bits": 8 * len(p.payload)})
            if buffered:
                in_device += 1
            elif device.next_event(confirm, timeout) is None:
                raise TimeoutError("modem never confirmed the frame")
        while buffered and in_device > 0:
            if device.next_event(confirm, timeout) is None:
                break
            in_device -= 1
        receiver.wait_count(len(packets), settle)
    finally:
        receiver.stopping.set()
        tx.close()
        rx.close()
        receiver.join(1.0)
    src = packets[0].src if packets else 0
    rx_recs = [{"pkt": packet_id(src, pk), "t_dlv": t, "bits": 8 * len(pk.payload)}
               for pk, t in receiver.arrivals]
    return TxRxLog.merge(tx_recs, rx_recs, run=run)
