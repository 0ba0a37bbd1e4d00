"""A running node: drivers, one scheduler, the multi-destination switch and the app layer."""

from __future__ import annotations

import itertools
import json
import logging
import os
import threading
import time
from collections import Counter
from concurrent.futures import Future
from pathlib import Path
from typing import Callable, Optional

from .. import connectors
from ..connectors import ConnectorError, EndOfStream, Endpoint
from ..drivers import make_driver
from ..drivers.base import DriverNote, ModemDriver
from ..drivers.packet import (BROADCAST, BackpressureError, Packet, PacketError,
                              TrafficClass)
from ..scheduler import Scheduler, SchedulerConfig
from .app import AppHeader, Reassembler, StreamError, app_chunk
from .config import ConfigError, NodeConfig
from .routing import NoRouteError, multidest_route

log = logging.getLogger(__name__)

_EPOCH0 = time.time()
_MONO0 = time.monotonic()


def wallclock(mono: Optional[float]) -> Optional[float]:
    """Map a monotonic reading onto the epoch scale used in log files."""
    if mono is None:
        return None
    return _EPOCH0 + (mono - _MONO0)


class NodeStartError(RuntimeError):
    pass


def packet_id(src: int, p: Packet) -> str:
    """``src:stream:chunk`` for application packets, ``src:seq`` otherwise."""
    try:
        hdr, _ = AppHeader.unpack(p.payload)
    except StreamError:
        return f"{src}:{p.seq}"
    return f"{src}:{hdr.stream_id}:{hdr.chunk_index}"


class SendJob:
    """One stream on its way out, paced by transmission results.

    At most ``window`` of its packets are handed to drivers and not yet
    confirmed; each confirmation releases the next packet.
    """

    def __init__(self, node: "Node", packets: list[Packet], window: int, stream_id: int):
        self.node = node
        self.stream_id = stream_id
        self.packets = packets
        self.window = window
        self.next = 0
        self.in_flight: set[int] = set()
        self.results: dict[int, bool] = {}
        self.done: Future = Future()
        if not packets:
            self.done.set_result(self)

    @property
    def ok(self) -> bool:
        return all(self.results.values()) and len(self.results) == len(self.packets)

    def pump(self):
        while len(self.in_flight) < self.window and self.next < len(self.packets):
            p = self.packets[self.next]
            self.next += 1
            self.in_flight.add(id(p))
            if not self.node._send_packet(p, job=self):
                self.in_flight.discard(id(p))
                self.results[p.seq] = False
        self._check_done()

    def on_result(self, p: Packet, ok: bool):
        self.in_flight.discard(id(p))
        self.results[p.seq] = ok
        self.pump()

    def _check_done(self):
        if len(self.results) == len(self.packets) and not self.done.done():
            self.done.set_result(self)


class Node:
    """Node handle returned by :func:`node_run`.

    ``on_stream(src, stream_id, data)`` is called (in the scheduler thread)
    for every completed incoming stream.
    """

    def __init__(self, cfg: NodeConfig, on_stream: Optional[Callable] = None,
                 endpoints: Optional[dict] = None):
        self.cfg = cfg
        self.address = cfg.address
        self.name = cfg.name or f"node{cfg.address}"
        self.on_stream = on_stream
        self.scheduler = Scheduler(SchedulerConfig(to_rx=cfg.to_rx), name=f"{self.name}-sched")
        self.drivers: dict[str, ModemDriver] = {}
        for s in cfg.stacks:
            ep = (endpoints or {}).get(s.id, s.endpoint)
            try:
                d = make_driver(s.kind, ep, self.scheduler, addr=cfg.address,
                                name=f"{self.name}/{s.id}", **s.params)
            except TypeError as exc:
                raise ConfigError(f"stack {s.id}: {exc}") from None
            d.handler = self._on_note
            self.drivers[s.id] = d
        self._check_packet_size()
        self.counters: Counter = Counter()
        self.events: list[tuple[str, str]] = []
        self.reassembler = Reassembler()
        self.streams: list[tuple[int, int, bytes]] = []
        self.tx_records: dict[int, dict] = {}
        self.rx_records: list[dict] = []
        self.tx_log: list[dict] = []      # finished transmissions, in completion order
        self._jobs: dict[int, SendJob] = {}
        self._stream_ids = itertools.count(1)
        self._seq: Counter = Counter()
        self._streams_cond = threading.Condition()
        self._log_file = None
        self._ingest = None
        self._ingest_thread = None
        self._stopping = threading.Event()
        self.started = False

    def _check_packet_size(self):
        size = self.cfg.app.packet_size
        for r in self.cfg.routes:
            d = self.drivers[r.stack]
            if size > d.max_payload:
                raise ConfigError(f"packet_size {size} B exceeds the {d.max_payload} B payload cap "
                                  f"of stack {r.stack}")

    # -- lifecycle --------------------------------------------------------

    def start(self):
        started = []
        try:
            for sid, d in self.drivers.items():
                d.start()
                started.append(d)
        except (ConnectorError, OSError) as exc:
            for d in started:
                d.stop()
            self.scheduler.stop()
            raise NodeStartError(f"{self.name}: stack {sid} failed to open: {exc}") from exc
        if self.cfg.log:
            Path(self.cfg.log).parent.mkdir(parents=True, exist_ok=True)
            self._log_file = open(self.cfg.log, "a", buffering=1)
        self.scheduler.run_polling(self.drivers.values())
        if self.cfg.app.ingest:
            self._start_ingest(self.cfg.app.ingest)
        self.started = True
        return self

    def stop(self):
        self._stopping.set()
        if self._ingest is not None:
            self._ingest.close()
        for d in self.drivers.values():
            d.stop()
        self.scheduler.stop()
        if self._ingest_thread is not None:
            self._ingest_thread.join(2.0)
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()

    @property
    def faults(self) -> dict:
        return {sid: d.failed for sid, d in self.drivers.items() if d.failed}

    # -- sending ----------------------------------------------------------

    def route(self, dst: int) -> str:
        return multidest_route(dst, self.cfg.routes)

    def send_bytes(self, data: bytes, dst: Optional[int] = None, window: Optional[int] = None,
                   tclass: Optional[TrafficClass] = None) -> SendJob:
        """Chunk ``data`` and send it to ``dst``; returns a job whose ``done`` future resolves
        once every packet has a transmission result."""
        dst = self.cfg.app.dst if dst is None else dst
        if dst is None:
            raise ValueError("no destination given and [app] dst unset")
        tclass = tclass or TrafficClass(self.cfg.app.tclass.upper())
        stream_id = next(self._stream_ids) & 0xFFFF
        packets = app_chunk(data, self.cfg.app.chunk_payload, self.address, dst, stream_id, tclass)
        for p in packets:
            p.seq = self._seq[tclass]
            self._seq[tclass] += 1
        job = SendJob(self, packets, window or self.cfg.app.window, stream_id)
        self.scheduler.schedule(job.pump)
        return job

    def send_packet(self, p: Packet) -> bool:
        """Send one ready-made packet from the scheduler thread."""
        self.scheduler.schedule(self._send_packet, 0.0, p)
        return True

    def _send_packet(self, p: Packet, job: Optional[SendJob] = None) -> bool:
        now = time.monotonic()
        rec = {"pkt": packet_id(p.src, p), "t_enq": now, "t_sent": None, "ok": None,
               "bits": 8 * len(p.payload), "dst": p.dst}
        if p.dst == self.address:
            rec["stack"] = "local"
            self.tx_records[id(p)] = rec
            p.t_sent = now
            self.scheduler.schedule(self._deliver_local, 0.0, p, job)
            return True
        try:
            sid = self.route(p.dst)
        except NoRouteError as exc:
            self._event("no_route", str(exc))
            rec.update(ok=False, stack=None)
            self._write_log("tx", rec)
            return False
        rec["stack"] = sid
        self.tx_records[id(p)] = rec
        if job is not None:
            self._jobs[id(p)] = job
        try:
            self.drivers[sid].enqueue_tx(p)
        except (PacketError, ConnectorError) as exc:
            self._event("tx_rejected", f"{sid}: {exc}")
            self.tx_records.pop(id(p), None)
            self._jobs.pop(id(p), None)
            rec["ok"] = False
            self._write_log("tx", rec)
            return False
        return True

    def _deliver_local(self, p: Packet, job: Optional[SendJob]):
        self._receive(p.copy())
        self._finish_tx(p, True)
        if job is not None:
            job.on_result(p, True)

    # -- driver notifications ---------------------------------------------

    def _on_note(self, driver: ModemDriver, note: DriverNote):
        if note.kind == "recv":
            p = note.packet
            if p.dst == self.address or p.dst == BROADCAST:
                self._receive(p)
            else:
                self._relay(p)
        elif note.kind == "tx_result":
            p = note.packet
            self._finish_tx(p, note.ok)
            job = self._jobs.pop(id(p), None)
            if job is not None:
                job.on_result(p, note.ok)
        elif note.kind == "fault":
            self._event("fault", f"{driver.name}: {note.reason}")
            self._fail_pending(driver)
        elif note.kind == "config_result" and not note.ok:
            self._event("config_failed", f"{driver.name}: {note.reason}")

    def _fail_pending(self, driver: ModemDriver):
        # packets still queued in a failed driver will never be confirmed
        with driver._lock:
            stuck = list(driver._txq)
            driver._txq.clear()
            if isinstance(driver.status.outstanding, Packet):
                stuck.insert(0, driver.status.outstanding)
        for p in stuck:
            self._finish_tx(p, False)
            job = self._jobs.pop(id(p), None)
            if job is not None:
                job.on_result(p, False)

    def _finish_tx(self, p: Packet, ok: bool):
        rec = self.tx_records.pop(id(p), None)
        if rec is None:
            return
        rec["ok"] = ok
        rec["t_sent"] = p.t_sent
        self._write_log("tx", rec)

    def _receive(self, p: Packet):
        now = time.monotonic()
        p.t_delivered = now
        self.counters["rx"] += 1
        rec = {"pkt": packet_id(p.src, p), "t_dlv": now, "bits": 8 * len(p.payload), "src": p.src}
        self.rx_records.append(rec)
        self._write_log("rx", rec)
        done = self.reassembler.add(p)
        if done is None:
            return
        (src, stream_id), data = done
        self.counters["streams"] += 1
        with self._streams_cond:
            self.streams.append((src, stream_id, data))
            self._streams_cond.notify_all()
        out = self.cfg.app.output_dir
        if out:
            os.makedirs(out, exist_ok=True)
            Path(out, f"stream_{src}_{stream_id}.bin").write_bytes(data)
        if self.on_stream is not None:
            self.on_stream(src, stream_id, data)

    def _relay(self, p: Packet):
        try:
            sid = self.route(p.dst)
        except NoRouteError as exc:
            self.counters["relay_no_route"] += 1
            self._event("no_route", str(exc))
            return
        fwd = p.copy(t_created=None, t_sent=None, t_delivered=None)
        try:
            self.drivers[sid].enqueue_tx(fwd)
        except BackpressureError as exc:
            self.counters["relay_drops"] += 1
            self._event("relay_drop", str(exc))
            return
        except (PacketError, ConnectorError) as exc:
            self.counters["relay_rejected"] += 1
            self._event("relay_rejected", str(exc))
            return
        self.counters["relayed"] += 1

    def _event(self, kind: str, text: str):
        log.warning("%s: %s: %s", self.name, kind, text)
        self.events.append((kind, text))

    def _write_log(self, direction: str, rec: dict):
        if direction == "tx":
            self.tx_log.append(rec)
        if self._log_file is None:
            return
        out = dict(rec, dir=direction, node=self.address)
        for key in ("t_enq", "t_sent", "t_dlv"):
            if key in out:
                out[key] = wallclock(out[key])
        self._log_file.write(json.dumps(out) + "\n")

    # -- waiting ----------------------------------------------------------

    def wait_streams(self, count: int, timeout: Optional[float] = None) -> bool:
        """Block until ``count`` streams have been completed at this node."""
        with self._streams_cond:
            return self._streams_cond.wait_for(lambda: len(self.streams) >= count, timeout)

    # -- ingest -----------------------------------------------------------

    def _start_ingest(self, spec: str):
        ep = Endpoint.parse(spec)
        if ep.kind not in ("tcp-server", "udp"):
            raise ConfigError(f"ingest endpoint must be tcps:// or udp://, not {spec!r}")
        self._ingest = connectors.open(ep)
        target = self._ingest_tcp if ep.kind == "tcp-server" else self._ingest_udp
        self._ingest_thread = threading.Thread(target=target, name=f"{self.name}-ingest", daemon=True)
        self._ingest_thread.start()

    @property
    def ingest_port(self) -> Optional[int]:
        return getattr(self._ingest, "port", None)

    def _ingest_tcp(self):
        # one stream per client connection, sent when the client closes
        conn = self._ingest
        buf = bytearray()
        while not self._stopping.is_set():
            if not conn.wait_readable(0.1):
                if buf and not conn.connected:
                    self.send_bytes(bytes(buf))
                    buf.clear()
                continue
            try:
                data = conn.read_available(65536)
            except EndOfStream:
                return
            if data:
                buf += data
            elif buf and not conn.connected:
                self.send_bytes(bytes(buf))
                buf.clear()

    def _ingest_udp(self):
        conn = self._ingest
        while not self._stopping.is_set():
            if not conn.wait_readable(0.1):
                continue
            try:
                data = conn.read_available(65536)
            except EndOfStream:
                return
            if data:
                self.send_bytes(data)


def node_run(cfg: NodeConfig, **kw) -> Node:
    """Build and start a node; raises NodeStartError if any stack cannot open."""
    return Node(cfg, **kw).start()
