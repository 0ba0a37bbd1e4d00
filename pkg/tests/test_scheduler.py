import json
import random
import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

from uwstack.scheduler import (Scheduler, SchedulerConfig, SchedulerShutdown, run_polling)

from conftest import wait_until


@pytest.fixture
def sched():
    s = Scheduler().start()
    yield s
    s.stop()


def test_config_rejects_nonpositive_period():
    with pytest.raises(ValueError):
        SchedulerConfig(to_rx=0)


def test_config_reads_to_rx_ms_from_environment():
    assert SchedulerConfig.from_env({"to_rx_ms": "25"}).to_rx == pytest.approx(0.025)
    assert SchedulerConfig.from_env({}).to_rx == pytest.approx(0.010)


def test_zero_delay_fires_before_positive_delay(sched):
    fired = []
    done = threading.Event()
    sched.schedule(lambda: (fired.append("later"), done.set()), 0.005)
    sched.schedule(lambda: fired.append("now"), 0.0)
    assert done.wait(1)
    assert fired == ["now", "later"]


def test_equal_fire_times_keep_insertion_order():
    s = Scheduler()
    fired = []
    at = time.monotonic() + 0.02
    for name in "ABCDE":
        s.schedule_at(at, fired.append, name)
    s.start()
    try:
        assert wait_until(lambda: len(fired) == 5, 1)
    finally:
        s.stop()
    assert fired == list("ABCDE")


def test_event_never_fires_before_its_delay(sched):
    out = []
    t0 = time.monotonic()
    sched.schedule(lambda: out.append(time.monotonic()), 0.03)
    assert wait_until(lambda: out, 1)
    assert out[0] - t0 >= 0.03


def test_ids_are_unique(sched):
    ids = [sched.schedule(lambda: None, 10) for _ in range(500)]
    assert len(set(ids)) == 500


def test_negative_delay_rejected(sched):
    with pytest.raises(ValueError):
        sched.schedule(lambda: None, -0.001)


def test_cancel_pending_event(sched):
    fired = []
    ident = sched.schedule(fired.append, 0.02, 1)
    assert sched.cancel(ident) is True
    assert sched.cancel(ident) is False
    time.sleep(0.06)
    assert fired == []


def test_cancel_unknown_and_fired_ids(sched):
    assert sched.cancel(999999) is False
    done = threading.Event()
    ident = sched.schedule(done.set)
    assert done.wait(1)
    assert sched.cancel(ident) is False


def test_schedule_after_shutdown_rejected():
    s = Scheduler().start()
    s.stop()
    with pytest.raises(SchedulerShutdown):
        s.schedule(lambda: None)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=40), min_size=1, max_size=30, unique=True))
def test_fire_order_matches_sorted_fire_times(delays_ms):
    s = Scheduler()
    fired = []
    base = time.monotonic() + 0.01
    for d in delays_ms:
        s.schedule_at(base + d / 1000.0, fired.append, d)
    s.start()
    try:
        assert wait_until(lambda: len(fired) == len(delays_ms), 2)
    finally:
        s.stop()
    assert fired == sorted(delays_ms)


def test_no_event_fires_twice_or_after_cancel():
    s = Scheduler().start()
    counts = {}
    lock = threading.Lock()

    def hit(i):
        with lock:
            counts[i] = counts.get(i, 0) + 1

    rng = random.Random(3)
    ids = {s.schedule(hit, rng.uniform(0, 0.05), i): i for i in range(300)}
    cancelled = {ids[e] for e in list(ids)[::3] if s.cancel(e)}
    time.sleep(0.15)
    s.stop()
    assert all(v == 1 for v in counts.values())
    assert not cancelled & set(counts)
    assert len(counts) + len(cancelled) == 300


def test_periodic_jitter_is_small():
    s = Scheduler().start()
    stamps = []

    def tick():
        stamps.append(time.monotonic())
        if len(stamps) < 60:
            s.schedule(tick, 0.01)

    s.schedule(tick, 0.01)
    try:
        assert wait_until(lambda: len(stamps) >= 60, 5)
    finally:
        s.stop()
    gaps = [b - a for a, b in zip(stamps, stamps[1:])]
    jitter = sum(abs(g - 0.01) for g in gaps) / len(gaps)
    assert jitter <= 0.002


class FakeDriver:
    def __init__(self):
        self.items = []
        self.lock = threading.Lock()
        self.seen = []

    def push(self, item):
        with self.lock:
            self.items.append(item)

    def drain(self):
        with self.lock:
            out, self.items = self.items, []
        return out

    def dispatch(self, item):
        self.seen.append(item)


def test_polling_drains_whole_queue_in_fifo_order():
    d = FakeDriver()
    for i in range(50):
        d.push(i)
    s = run_polling([d], SchedulerConfig(to_rx=0.01))
    try:
        assert wait_until(lambda: len(d.seen) == 50, 1)
        assert d.seen == list(range(50))
    finally:
        s.stop()


def test_polling_with_no_drivers_stops_cleanly():
    s = run_polling([], SchedulerConfig(to_rx=0.01))
    time.sleep(0.05)
    s.stop()
    assert not s.running
    assert s.ticks >= 2


def test_drain_failure_is_logged_and_loop_continues():
    class Broken:
        def drain(self):
            raise RuntimeError("boom")

    good = FakeDriver()
    s = run_polling([Broken(), good], SchedulerConfig(to_rx=0.01))
    try:
        good.push("x")
        assert wait_until(lambda: good.seen == ["x"], 1)
        assert any("boom" in e for e in s.errors)
        assert s.running
    finally:
        s.stop()


def test_dispatch_lag_is_bounded_by_period():
    d = FakeDriver()
    lags = []
    d.dispatch = lambda t: lags.append(time.monotonic() - t)
    s = run_polling([d], SchedulerConfig(to_rx=0.01))
    rng = random.Random(5)
    try:
        for _ in range(1000):
            time.sleep(rng.uniform(0, 0.01))
            d.push(time.monotonic())
        assert wait_until(lambda: len(lags) == 1000, 2)
    finally:
        s.stop()
    eps = SchedulerConfig().jitter_bound
    assert min(lags) >= 0
    assert max(lags) <= 0.01 + eps
    # mean converges to T/2 within 20 %
    assert 0.004 <= sum(lags) / len(lags) <= 0.006


def test_event_log_records_fire_cancel_dispatch(tmp_path):
    path = tmp_path / "events.jsonl"
    d = FakeDriver()
    s = Scheduler(SchedulerConfig(to_rx=0.01), log_path=path)
    s.run_polling([d])
    fired = threading.Event()
    s.schedule(fired.set, 0.0)
    s.cancel(s.schedule(lambda: None, 5))
    d.push("x")
    assert fired.wait(1)
    assert wait_until(lambda: d.seen, 1)
    s.stop()
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert {l["ev"] for l in lines} == {"fire", "cancel", "dispatch"}
    assert all(set(l) >= {"t_ms", "ev", "id"} for l in lines)
