"""Exit criteria, each checked at its stated tolerance.

Every test appends one PASS/FAIL line that the terminal summary prints at
the end of the session.  The long real-time scenarios run concurrently in
worker processes (one run each) so the whole suite fits in a few minutes;
the timing-sensitive scheduler criteria run first, alone.
"""

import multiprocessing
import random
import resource
import subprocess
import sys
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import pytest

import oracle
from conftest import wait_until
from uwstack.bench.scenario import Scenario, compare_direct, run_scenario
from uwstack.drivers.s2c import S2CDriver
from uwstack.emulators import ChannelConfig, S2CEmulator, VirtualMedium
from uwstack.scheduler import SchedulerConfig, run_polling

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

TESTS = Path(__file__).parent


@pytest.fixture
def verdict(request):
    lines = request.config.__dict__.setdefault("acceptance_lines", [])

    def record(number, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
        lines.append(line)
        print(line)
        return ok
    return record


def test_1_sync_delay(verdict):
    lags = []

    class Arrivals:
        """A reception queue holding the monotonic time each item arrived."""

        def __init__(self):
            self.pending = []
            self.lock = threading.Lock()

        def push(self, t):
            with self.lock:
                self.pending.append(t)

        def drain(self):
            with self.lock:
                out, self.pending = self.pending, []
            return out

        def dispatch(self, t):
            lags.append(time.monotonic() - t)

    d = Arrivals()
    s = run_polling([d], SchedulerConfig(to_rx=0.01))
    rng = random.Random(11)
    try:
        for _ in range(1000):
            time.sleep(rng.uniform(0, 0.01))
            d.push(time.monotonic())
        wait_until(lambda: len(lags) == 1000, 2)
    finally:
        s.stop()
    mean_ms = 1000 * sum(lags) / max(len(lags), 1)
    assert verdict(1, "mean dispatch lag at to_rx 10 ms", len(lags) == 1000 and 4 <= mean_ms <= 6,
                   f"{len(lags)} arrivals, mean {mean_ms:.2f} ms, band [4, 6] ms")


def test_2_idle_cost(verdict):
    medium = VirtualMedium(ChannelConfig.for_modem("s2c"), name="idle-cost")
    emus = [S2CEmulator("tcps://127.0.0.1:0", medium, a).start() for a in (1, 2)]
    sched = run_polling([], SchedulerConfig(to_rx=0.01))
    drivers = [S2CDriver(f"tcp://127.0.0.1:{e.port}", scheduler=sched, addr=e.addr).start()
               for e in emus]
    try:
        time.sleep(1.0)
        r0, w0 = resource.getrusage(resource.RUSAGE_SELF), time.monotonic()
        time.sleep(60.0)
        r1, w1 = resource.getrusage(resource.RUSAGE_SELF), time.monotonic()
    finally:
        for d in drivers:
            d.stop()
        sched.stop()
        for e in emus:
            e.stop()
        medium.close()
    cpu = (r1.ru_utime - r0.ru_utime) + (r1.ru_stime - r0.ru_stime)
    share = 100 * cpu / (w1 - w0)
    assert verdict(2, "idle scheduler with 2 drivers", share <= 4.0,
                   f"{share:.2f} % of one core over {w1 - w0:.0f} s, limit 4 %")


# -- real-time scenarios --------------------------------------------------

JOBS = {
    "im": (compare_direct, "s2c_im_64B"),
    "ahoi": (run_scenario, "ahoi_32B"),
    "twohop": (run_scenario, "twohop_ahoi_csa"),
    "burst": (compare_direct, "s2c_burst_512B"),
    "burst_hr": (compare_direct, "s2c_burst_hr_824B"),
    "csa": (run_scenario, "csa_udp_loopback"),
}


@pytest.fixture(scope="module")
def scenarios():
    pool = ProcessPoolExecutor(len(JOBS), mp_context=multiprocessing.get_context("spawn"))
    futures = {key: pool.submit(fn, name, 1) for key, (fn, name) in JOBS.items()}
    yield {key: f for key, f in futures.items()}
    pool.shutdown(cancel_futures=True)


def _im_oracle():
    ch = Scenario.load("s2c_im_64B").channel_config
    cycle = oracle.far_end_cycle(64, ch.bitrate_im, ch.per_packet_overhead, ch.distance,
                                 ch.proc_delay, ch.ack_len, 0.010)
    return oracle.rrx(64, cycle)


def test_3_s2c_im(scenarios, verdict):
    m = scenarios["im"].result().stack.measurement
    expect = _im_oracle()
    ok = abs(m.r_rx - expect) <= 0.10 * expect and 445 <= m.r_rx <= 520 \
        and abs(m.p_dd - 1.125) <= 0.15 * 1.125
    assert verdict(3, "S2C IM 64 B at 976 bit/s", ok,
                   f"R_RX {m.r_rx:.1f} bit/s vs oracle {expect:.1f} (±10 %) and [445, 520]; "
                   f"P_dd {m.p_dd:.3f} s vs 1.125 s (±15 %)")


def test_4_ahoi(scenarios, verdict):
    res = scenarios["ahoi"].result()
    m = res.measurement
    ok = 185 <= m.r_rx <= 225 and 1.2 <= m.p_dd <= 1.6 and res.streams_ok == m.n_runs
    assert verdict(4, "AHOI 32 B at 260 bit/s", ok,
                   f"R_RX {m.r_rx:.1f} bit/s in [185, 225]; P_dd {m.p_dd:.3f} s in [1.2, 1.6]")


def test_5_stack_vs_direct(scenarios, verdict):
    im = scenarios["im"].result().ratio
    burst = scenarios["burst"].result().ratio
    hr = scenarios["burst_hr"].result().ratio
    ok = im >= 0.95 and burst <= 0.9 and hr <= 0.4
    assert verdict(5, "stack/direct R_RX ratios", ok,
                   f"IM {im:.3f} >= 0.95; burst 3246 bit/s {burst:.3f} <= 0.9; "
                   f"burst 31.2 kbit/s {hr:.3f} <= 0.4")


def test_6_csa_udp(scenarios, verdict):
    res = scenarios["csa"].result()
    mbit = res.measurement.r_rx / 1e6
    ok = mbit >= 8.0 and res.measurement.lost == 0 and res.streams_ok == 1
    assert verdict(6, "CSA UDP loopback", ok,
                   f"R_RX {mbit:.2f} Mbit/s >= 8, lost {res.measurement.lost}")


def test_7_two_hop(scenarios, verdict):
    hop = scenarios["twohop"].result()
    solo = scenarios["ahoi"].result().measurement
    m = hop.measurement
    rel = abs(m.r_rx - solo.r_rx) / solo.r_rx
    ok = 195 <= m.r_rx <= 215 and rel <= 0.05 and abs(m.p_dd - 1.5) <= 0.15 * 1.5 \
        and hop.streams_ok == m.n_runs and m.lost == 0
    assert verdict(7, "two-hop AHOI + CSA/TCP", ok,
                   f"R_RX {m.r_rx:.1f} bit/s in [195, 215], {100 * rel:.1f} % from AHOI solo "
                   f"{solo.r_rx:.1f} (<= 5 %); P_dd {m.p_dd:.3f} s vs 1.5 s (±15 %); "
                   f"{hop.streams_ok}/{m.n_runs} files bit-exact")


PROPERTY_SUITES = [
    "test_fsm.py::test_single_outstanding_over_random_sequences",
    "test_fsm.py::test_idle_is_reachable_from_every_reachable_state",
    "test_dialects.py::test_s2c_round_trip_through_modem_echo",
    "test_dialects.py::test_s2c_burst_round_trip",
    "test_dialects.py::test_ahoi_round_trip",
    "test_dialects.py::test_csa_round_trip",
    "test_dialects.py::test_s2c_fuzz_totality",
    "test_dialects.py::test_ahoi_fuzz_totality",
    "test_dialects.py::test_csa_fuzz_totality",
    "test_drivers.py::test_fifo_over_ten_thousand_packets",
    "test_emulators.py::test_loss_fraction_within_three_sigma",
]


def test_8_property_suites(verdict):
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *(str(TESTS / s) for s in PROPERTY_SUITES)],
                          capture_output=True, text=True, cwd=TESTS.parent, timeout=900)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    assert verdict(8, "property suites", proc.returncode == 0, tail), proc.stdout[-3000:]
