"""Real-time event scheduler.

One loop thread fires timed callbacks and, every ``to_rx`` seconds, drains
the reception queues of the registered drivers.  Timers and modem
notifications therefore reach the stack through the same execution
context, in a deterministic order.

Delays are measured on the monotonic clock.  The epoch clock is only used
to stamp log lines.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

log = logging.getLogger(__name__)

DEFAULT_TO_RX_MS = 10.0


class SchedulerShutdown(RuntimeError):
    """Raised when scheduling on a scheduler that has been stopped."""


@dataclass(frozen=True)
class SchedulerConfig:
    """Polling configuration.

    ``to_rx`` is the reception polling period in seconds and ``jitter_bound``
    the tolerated lateness of a tick (used by tests and lag checks).
    """

    to_rx: float = DEFAULT_TO_RX_MS / 1000.0
    start_time: Optional[float] = None
    # loop lateness (about 2 ms) plus one interpreter thread-switch interval
    # (5 ms), which is how long a runnable thread may wait for the GIL
    jitter_bound: float = 0.007

    def __post_init__(self):
        if not self.to_rx > 0:
            raise ValueError(f"to_rx must be > 0, got {self.to_rx!r}")

    @classmethod
    def from_env(cls, env=None) -> "SchedulerConfig":
        env = os.environ if env is None else env
        raw = env.get("to_rx_ms", env.get("TO_RX_MS"))
        to_rx_ms = float(raw) if raw else DEFAULT_TO_RX_MS
        return cls(to_rx=to_rx_ms / 1000.0)


@dataclass(order=True)
class SchedulerEvent:
    fire_at: float
    seq: int
    id: int = field(compare=False)
    action: Callable[..., Any] = field(compare=False)
    args: tuple = field(default=(), compare=False)


class EventLog:
    """JSONL run log: ``{"t_ms": ..., "ev": ..., "id": ...}`` per line."""

    def __init__(self, path):
        self._fh = open(path, "a", buffering=1)
        self._lock = threading.Lock()
        self._mono0 = time.monotonic()
        self._epoch0 = time.time()

    def write(self, ev: str, ident, **extra):
        t_ms = (self._epoch0 + time.monotonic() - self._mono0) * 1000.0
        rec = {"t_ms": round(t_ms, 3), "ev": ev, "id": ident}
        rec.update(extra)
        line = json.dumps(rec)
        with self._lock:
            self._fh.write(line + "\n")

    def close(self):
        with self._lock:
            self._fh.close()


class Scheduler:
    """Timer heap plus periodic reception polling in a single loop thread.

    ``schedule`` and ``cancel`` may be called from any thread.  Events with
    equal ``fire_at`` fire in insertion order.

    Drivers handed to :meth:`run_polling` must provide ``drain()`` returning
    the pending reception items in FIFO order and ``dispatch(item)``
    delivering one item to the owning stack.
    """

    def __init__(self, config: Optional[SchedulerConfig] = None, log_path=None,
                 name: str = "scheduler"):
        self.config = config or SchedulerConfig()
        self.name = name
        self._heap: list[SchedulerEvent] = []
        self._pending: dict[int, SchedulerEvent] = {}
        self._cond = threading.Condition()
        self._ids = itertools.count(1)
        self._seq = itertools.count()
        self._drivers: list = []
        self._polling = False
        self._next_poll = 0.0
        self._running = False
        self._shutdown = False
        self._thread: Optional[threading.Thread] = None
        self._log = EventLog(log_path) if log_path else None
        self.errors: list[str] = []
        self.ticks = 0

    @staticmethod
    def now() -> float:
        return time.monotonic()

    # -- timers -----------------------------------------------------------

    def schedule(self, action: Callable[..., Any], delay: float = 0.0, *args) -> int:
        """Run ``action(*args)`` no earlier than ``delay`` seconds from now."""
        if delay < 0:
            raise ValueError("delay must be >= 0")
        return self.schedule_at(time.monotonic() + delay, action, *args)

    def schedule_at(self, fire_at: float, action: Callable[..., Any], *args) -> int:
        with self._cond:
            if self._shutdown:
                raise SchedulerShutdown(f"{self.name} has been shut down")
            ident = next(self._ids)
            ev = SchedulerEvent(fire_at, next(self._seq), ident, action, args)
            heapq.heappush(self._heap, ev)
            self._pending[ident] = ev
            if self._heap[0] is ev:
                self._cond.notify()
        return ident

    def cancel(self, event_id: int) -> bool:
        with self._cond:
            ev = self._pending.pop(event_id, None)
        if ev is None:
            return False
        if self._log:
            self._log.write("cancel", event_id)
        return True

    def pending(self) -> int:
        with self._cond:
            return len(self._pending)

    # -- polling ----------------------------------------------------------

    def add_driver(self, driver):
        with self._cond:
            self._drivers.append(driver)

    def remove_driver(self, driver):
        with self._cond:
            if driver in self._drivers:
                self._drivers.remove(driver)

    def run_polling(self, drivers: Iterable = (), cfg: Optional[SchedulerConfig] = None):
        """Poll ``drivers`` every ``to_rx`` and start the loop if needed."""
        with self._cond:
            if cfg is not None:
                self.config = cfg
            for d in drivers:
                if d not in self._drivers:
                    self._drivers.append(d)
            self._polling = True
            self._next_poll = time.monotonic() + self.config.to_rx
            self._cond.notify()
        self.start()
        return self

    def _poll(self):
        self.ticks += 1
        for d in list(self._drivers):
            try:
                items = d.drain()
            except Exception as exc:  # a broken driver must not stop the loop
                self._record_error(f"drain {d!r}: {exc!r}")
                continue
            for item in items:
                try:
                    d.dispatch(item)
                except Exception as exc:
                    self._record_error(f"dispatch {d!r}: {exc!r}")
                if self._log:
                    self._log.write("dispatch", getattr(item, "id", None))

    def _record_error(self, msg: str):
        log.error("%s: %s", self.name, msg)
        self.errors.append(msg)

    # -- loop -------------------------------------------------------------

    def start(self):
        with self._cond:
            if self._shutdown:
                raise SchedulerShutdown(f"{self.name} has been shut down")
            if self._running:
                return self
            self._running = True
        self._thread = threading.Thread(target=self._loop, name=self.name, daemon=True)
        self._thread.start()
        return self

    def stop(self, timeout: Optional[float] = 2.0):
        with self._cond:
            self._shutdown = True
            self._running = False
            self._cond.notify()
        if self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join(timeout)
        if self._log:
            self._log.close()
            self._log = None

    @property
    def running(self) -> bool:
        return self._running

    def _loop(self):
        to_rx = self.config.to_rx
        while True:
            due = []
            poll_now = False
            with self._cond:
                if not self._running:
                    return
                now = time.monotonic()
                while self._heap and self._heap[0].fire_at <= now:
                    ev = heapq.heappop(self._heap)
                    if self._pending.pop(ev.id, None) is not None:
                        due.append(ev)
                if self._polling and now >= self._next_poll:
                    poll_now = True
                    to_rx = self.config.to_rx
                    # keep the tick grid fixed; skip ticks that were missed entirely
                    self._next_poll += to_rx
                    if self._next_poll <= now:
                        missed = int((now - self._next_poll) // to_rx) + 1
                        self._next_poll += missed * to_rx
                if not due and not poll_now:
                    wake = self._heap[0].fire_at if self._heap else now + 1.0
                    if self._polling:
                        wake = min(wake, self._next_poll)
                    self._cond.wait(max(0.0, wake - now))
                    continue
            for ev in due:
                try:
                    ev.action(*ev.args)
                except Exception as exc:
                    self._record_error(f"event {ev.id}: {exc!r}")
                if self._log:
                    self._log.write("fire", ev.id)
            if poll_now:
                self._poll()


def run_polling(drivers: Iterable, cfg: Optional[SchedulerConfig] = None, log_path=None) -> Scheduler:
    """Create a scheduler that drains ``drivers`` every ``cfg.to_rx`` seconds."""
    sched = Scheduler(cfg or SchedulerConfig.from_env(), log_path=log_path)
    return sched.run_polling(drivers)
