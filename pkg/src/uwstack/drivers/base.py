"""Common driver machinery.

A driver owns a connector plus two threads: the TX emitter writes whatever
the state machine decided to send, the RX reader feeds device bytes to the
interpreter and applies the resulting events.  Both mutate driver state only
under ``self._lock``.  Everything travelling up the stack (received packets,
transmission results, configuration results) is put on ``rx_queue`` and
reaches the owner when the scheduler drains it.
"""

from __future__ import annotations

import itertools
import logging
import queue
import threading
import time
from collections import Counter, deque
from concurrent.futures import Future
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .. import connectors
from ..connectors import Connection, ConnectorError, EndOfStream, Endpoint
from .fsm import (DEFAULT_CONFIRM, Action, ActionKind, ConfigCommand,
                  DriverEventIn, EventKind, ModemStatus, step)
from .packet import BackpressureError, Packet, PacketSizeError

log = logging.getLogger(__name__)

DEFAULT_QUEUE_CAP = 1000
RX_WAIT = 0.05
_note_ids = itertools.count(1)


@dataclass
class DriverNote:
    """One item on a driver's reception queue."""

    kind: str                     # "recv", "tx_result", "config_result", "fault"
    packet: Optional[Packet] = None
    ok: bool = True
    reason: str = ""
    t: float = field(default_factory=time.monotonic)
    id: int = field(default_factory=lambda: next(_note_ids))
    config: Any = None


class ModemDriver:
    """Base class for modem drivers.

    Subclasses provide :meth:`encode_packet`, :meth:`parse` and, when the
    device is configurable, :meth:`config_commands`.
    """

    kind = "base"
    use_general_state = True

    def __init__(self, endpoint, scheduler=None, addr: int = 0,
                 max_payload: int = 64, queue_cap: int = DEFAULT_QUEUE_CAP,
                 tx_timeout: Optional[float] = None, name: Optional[str] = None):
        self.endpoint = endpoint
        self.scheduler = scheduler
        self.addr = addr
        self.max_payload = max_payload
        self.queue_cap = queue_cap
        self.tx_timeout = tx_timeout
        self.name = name or f"{self.kind}@{addr}"
        self.confirm = DEFAULT_CONFIRM
        self.status = ModemStatus()
        self.conn: Optional[Connection] = None
        self.handler: Optional[Callable[["ModemDriver", DriverNote], None]] = None
        self.rx_queue: "queue.SimpleQueue[DriverNote]" = queue.SimpleQueue()
        self.counters: Counter = Counter()
        self.failed: Optional[str] = None
        self.history: Optional[list] = None   # set to [] to record state transitions
        self._lock = threading.RLock()
        self._out_cond = threading.Condition(self._lock)
        self._txq: deque = deque()
        self._configq: deque = deque()
        self._outbox: deque = deque()
        self._stopping = threading.Event()
        self._threads: list[threading.Thread] = []
        self._timer_id = None
        self._unconfirmed = 0
        self.max_unconfirmed = 0

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"

    # -- lifecycle --------------------------------------------------------

    def start(self):
        if self.conn is None:
            ep = self.endpoint
            self.conn = ep if isinstance(ep, Connection) else connectors.open(ep)
        if self.scheduler is not None:
            self.scheduler.add_driver(self)
        for target, suffix in ((self._rx_loop, "rx"), (self._tx_loop, "tx")):
            t = threading.Thread(target=target, name=f"{self.name}-{suffix}", daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self):
        self._stopping.set()
        with self._lock:
            self._out_cond.notify_all()
        if self.conn is not None:
            self.conn.close()
        for t in self._threads:
            if t is not threading.current_thread():
                t.join(2.0)
        if self.scheduler is not None:
            self.scheduler.remove_driver(self)

    # -- scheduler side ---------------------------------------------------

    def drain(self) -> list:
        items = []
        q = self.rx_queue
        while True:
            try:
                items.append(q.get_nowait())
            except queue.Empty:
                return items

    def dispatch(self, note: DriverNote):
        if self.handler is not None:
            self.handler(self, note)

    def _notify(self, note: DriverNote):
        self.rx_queue.put(note)

    # -- upper-layer API --------------------------------------------------

    def enqueue_tx(self, p: Packet) -> bool:
        if len(p.payload) > self.max_payload:
            self.counters["rejected_size"] += 1
            raise PacketSizeError(
                f"{self.name}: payload {len(p.payload)} B exceeds {self.max_payload} B")
        with self._lock:
            if self.failed:
                raise ConnectorError(f"{self.name} failed: {self.failed}")
            if len(self._txq) >= self.queue_cap:
                self.counters["rejected_full"] += 1
                raise BackpressureError(f"{self.name}: TX queue full ({self.queue_cap})")
            if p.t_created is None:
                p.t_created = time.monotonic()
            self._txq.append(p)
            self._kick()
        return True

    def configure(self, settings: dict) -> Future:
        """Apply device settings one command at a time; resolves when done."""
        commands = self.config_commands(dict(settings))
        fut: Future = Future()
        cfg = ConfigCommand(dict(settings), commands, future=fut)
        with self._lock:
            if not commands:
                self.on_config_applied(cfg)
                fut.set_result(True)
                return fut
            self._configq.append(cfg)
            self._kick()
        return fut

    def queue_length(self) -> int:
        with self._lock:
            return len(self._txq)

    # -- subclass hooks ---------------------------------------------------

    def encode_packet(self, p: Packet) -> bytes:
        raise NotImplementedError

    def parse(self, data: bytes) -> list:
        raise NotImplementedError

    def config_commands(self, settings: dict) -> list:
        if settings:
            raise KeyError(f"{self.kind} driver has no settings {sorted(settings)}")
        return []

    def on_config_applied(self, cfg: ConfigCommand):
        pass

    def step(self, st: ModemStatus, ev: DriverEventIn):
        return step(st, ev, self.confirm)

    def after_write(self, item):
        """Called by the TX emitter once ``item`` has been written."""

    def on_timeout(self, p: Packet):
        self._apply(DriverEventIn(EventKind.DEVICE_FAILED, text="timeout"))

    def filter_event(self, ev: DriverEventIn) -> Optional[DriverEventIn]:
        """Translate an interpreter event before it reaches the state machine."""
        return self._config_progress(ev)

    # -- state machine ----------------------------------------------------

    def _kick(self):
        st = self.status
        if not st.idle or self.failed:
            return
        if self._configq:
            self._apply(DriverEventIn(EventKind.CONFIG_REQUEST, config=self._configq.popleft()))
        elif self._txq:
            self._apply(DriverEventIn(EventKind.TX_REQUEST, packet=self._txq.popleft()))

    def _apply(self, ev: DriverEventIn):
        with self._lock:
            before = self.status
            self.status, actions = self.step(before, ev)
            if self.history is not None:
                self.history.append((before, ev.kind, self.status))
            self._perform(actions)

    def _perform(self, actions: list[Action]):
        for a in actions:
            k = a.kind
            if k is ActionKind.EMIT:
                self._unconfirmed += 1
                self.max_unconfirmed = max(self.max_unconfirmed, self._unconfirmed)
                self._emit(a.item)
                self._arm_timer(a.item)
            elif k is ActionKind.EMIT_CONFIG:
                self._unconfirmed += 1
                self.max_unconfirmed = max(self.max_unconfirmed, self._unconfirmed)
                self._emit(a.item)
            elif k is ActionKind.NOTIFY:
                self._unconfirmed -= 1
                self._disarm_timer()
                self.counters["tx_ok" if a.ok else "tx_failed"] += 1
                self._notify(DriverNote("tx_result", a.item, ok=a.ok, reason=a.reason))
            elif k is ActionKind.CONFIG_RESULT:
                self._unconfirmed -= 1
                cfg = a.item
                if a.ok:
                    self.on_config_applied(cfg)
                if cfg.future is not None and not cfg.future.done():
                    if a.ok:
                        cfg.future.set_result(True)
                    else:
                        cfg.future.set_exception(RuntimeError(f"config failed: {a.reason}"))
                self._notify(DriverNote("config_result", ok=a.ok, reason=a.reason, config=cfg.settings))
            elif k is ActionKind.TRY_NEXT:
                self._kick()
            elif k is ActionKind.DELIVER_UP:
                self.counters["rx"] += 1
                self._notify(DriverNote("recv", a.item))
            elif k is ActionKind.DEFER:
                if isinstance(a.item, Packet):
                    self._txq.appendleft(a.item)
                elif isinstance(a.item, ConfigCommand):
                    self._configq.appendleft(a.item)
            elif k is ActionKind.VIOLATION:
                self.counters["violations"] += 1
                log.debug("%s: protocol violation: %s", self.name, a.reason)
            elif k is ActionKind.FAULT:
                self.failed = a.reason
                self._notify(DriverNote("fault", ok=False, reason=a.reason))

    def _emit(self, item):
        self._outbox.append(item)
        self._out_cond.notify()

    def timeout_for(self, p: Packet) -> Optional[float]:
        return self.tx_timeout

    def _arm_timer(self, p: Packet):
        timeout = self.timeout_for(p)
        if timeout and self.scheduler is not None:
            self._timer_id = self.scheduler.schedule(self._timer_fired, timeout, p)

    def _disarm_timer(self):
        if self._timer_id is not None and self.scheduler is not None:
            self.scheduler.cancel(self._timer_id)
        self._timer_id = None

    def _timer_fired(self, p: Packet):
        with self._lock:
            if self.status.outstanding is not p:
                return
            self._timer_id = None
            self.counters["timeouts"] += 1
            self.on_timeout(p)

    # -- threads ----------------------------------------------------------

    def _tx_loop(self):
        while True:
            with self._lock:
                while not self._outbox and not self._stopping.is_set():
                    self._out_cond.wait(0.5)
                if self._stopping.is_set():
                    return
                item = self._outbox.popleft()
            if isinstance(item, ConfigCommand):
                data = item.commands[item.index]
            else:
                data = self.encode_packet(item)
            try:
                self.conn.write_bytes(data)
            except (ConnectorError, OSError) as exc:
                if not self._stopping.is_set():
                    self._apply(DriverEventIn(EventKind.TRANSPORT_ERROR, text=str(exc)))
                continue
            if isinstance(item, Packet):
                item.t_sent = time.monotonic()
            self.after_write(item)

    def _rx_loop(self):
        conn = self.conn
        while not self._stopping.is_set():
            if not conn.wait_readable(RX_WAIT):
                continue
            for _ in range(256):
                try:
                    data = conn.read_available(65536)
                except EndOfStream as exc:
                    if not self._stopping.is_set():
                        self._apply(DriverEventIn(EventKind.TRANSPORT_ERROR, text=f"end of stream: {exc}"))
                    return
                if not data:
                    break
                for ev in self.parse(data):
                    if ev.kind is EventKind.PARSE_ERROR:
                        self.counters["parse_errors"] += 1
                    self._on_device_event(ev)

    def _on_device_event(self, ev: DriverEventIn):
        with self._lock:
            ev = self.filter_event(ev)
            if ev is not None:
                self._apply(ev)

    def _config_progress(self, ev: DriverEventIn) -> Optional[DriverEventIn]:
        """Turn a device OK during configuration into 'next command' or CONFIG_DONE."""
        cfg = self.status.outstanding
        if ev.kind is EventKind.DEVICE_OK and isinstance(cfg, ConfigCommand):
            if cfg.index + 1 < len(cfg.commands):
                cfg.index += 1
                self._emit(cfg)
                return None
            return DriverEventIn(EventKind.CONFIG_DONE, config=cfg)
        return ev
