"""Scenario files and the runner that turns them into measurements.

A scenario file is TOML::

    [scenario]
    name = "s2c_im_64B"
    kind = "s2c"             # s2c | ahoi | csa | twohop
    payload = "image.jpg"    # file next to the scenario or in the bundled data
    # payload_size = 20000   # ... or this many seeded random bytes
    runs = 5
    packet_size = 64         # bytes per packet, application header included
    window = 1               # packets in flight
    to_rx_ms = 10
    mode = "im-ack"          # S2C driver mode
    transport = "udp"        # CSA only: udp | tcp

    [channel]                # ChannelConfig fields for the acoustic link
    bitrate_im = 976
    distance = 5

    [driver]                 # extra keyword arguments for the acoustic drivers

    [direct]                 # compare_direct options
    buffered = false

Every run sends the payload once from node 1 to the last node and records
per-packet enqueue, send and delivery times.
"""

from __future__ import annotations

import csv
import json
import os
import random
import socket
import sys
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..drivers.packet import TrafficClass
from ..emulators.channel import ChannelConfig, VirtualMedium
from ..emulators.modems import AhoiEmulator, S2CEmulator
from ..netstack.app import app_chunk
from ..netstack.config import NodeConfig
from ..netstack.node import Node, node_run
from .direct import run_direct
from .metrics import InsufficientData, LinkMeasurement, TxRxLog

DATA_DIR = Path(__file__).with_name("data")
SCENARIO_DIR = Path(__file__).with_name("scenarios")
KINDS = ("s2c", "ahoi", "csa", "twohop")
SUMMARY_COLUMNS = ["scenario", "mode", "r_rx_bps", "p_dd_s", "loss", "runs"]


class ScenarioError(RuntimeError):
    pass


@dataclass
class Scenario:
    name: str
    kind: str
    packet_size: int
    payload: Optional[str] = None
    payload_size: Optional[int] = None
    seed: int = 1
    runs: int = 5
    window: int = 1
    to_rx_ms: float = 10.0
    mode: str = "im-ack"
    transport: str = "udp"
    timeout: float = 900.0
    channel: dict = field(default_factory=dict)
    driver: dict = field(default_factory=dict)
    direct: dict = field(default_factory=dict)
    base_dir: Path = field(default=SCENARIO_DIR)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        if (self.payload is None) == (self.payload_size is None):
            raise ScenarioError("give exactly one of payload and payload_size")
        if self.runs < 1:
            raise ScenarioError("runs must be >= 1")

    @property
    def channel_config(self) -> ChannelConfig:
        modem = "ahoi" if self.kind in ("ahoi", "twohop") else "s2c"
        return ChannelConfig.for_modem(modem, **self.channel)

    def payload_bytes(self) -> bytes:
        if self.payload_size is not None:
            return random.Random(self.seed).randbytes(self.payload_size)
        for base in (self.base_dir, DATA_DIR):
            path = Path(base, self.payload)
            if path.exists():
                return path.read_bytes()
        raise ScenarioError(f"payload file {self.payload!r} not found")

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        if not path.exists() and (SCENARIO_DIR / path).exists():
            path = SCENARIO_DIR / path
        if not path.exists() and (SCENARIO_DIR / f"{path}.toml").exists():
            path = SCENARIO_DIR / f"{path}.toml"
        try:
            data = tomllib.loads(path.read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ScenarioError(f"{path}: {exc}") from None
        head = dict(data.get("scenario", {}))
        try:
            return cls(**head, channel=data.get("channel", {}), driver=data.get("driver", {}),
                       direct=data.get("direct", {}), base_dir=path.parent)
        except TypeError as exc:
            raise ScenarioError(f"{path}: {exc}") from None


def bundled_scenarios() -> list[Path]:
    return sorted(SCENARIO_DIR.glob("*.toml"))


def _free_udp_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class Testbed:
    """Emulators and nodes of one scenario; node 1 sends, ``receiver`` measures."""

    __test__ = False  # not a pytest class despite the name

    def __init__(self, scn: Scenario):
        self.scn = scn
        self.medium: Optional[VirtualMedium] = None
        self.modems: list = []
        self.nodes: list[Node] = []
        self.modem_endpoints: dict[int, str] = {}

    @property
    def sender(self) -> Node:
        return self.nodes[0]

    @property
    def receiver(self) -> Node:
        return self.nodes[-1]

    def _node(self, addr: int, stacks: list[dict], routes: list[dict], dst: Optional[int] = None) -> Node:
        scn = self.scn
        cfg = NodeConfig.from_dict({
            "node": {"address": addr, "to_rx_ms": scn.to_rx_ms, "name": f"{scn.name}-n{addr}"},
            "stack": stacks, "route": routes,
            "app": {"packet_size": scn.packet_size, "dst": dst, "window": scn.window,
                    "tclass": "burst" if scn.mode == "burst" else "im"},
        })
        node = node_run(cfg)
        self.nodes.append(node)
        return node

    def _acoustic(self, addrs: list[int], aliases: dict[int, tuple] = None):
        scn = self.scn
        self.medium = VirtualMedium(scn.channel_config, name=scn.name, seed=scn.seed)
        for addr in addrs:
            extra = (aliases or {}).get(addr, ())
            if scn.kind == "s2c":
                m = S2CEmulator("tcps://127.0.0.1:0", self.medium, addr, aliases=extra).start()
                self.modem_endpoints[addr] = f"tcp://127.0.0.1:{m.port}"
            else:
                m = AhoiEmulator("serial://pty?baud=115200", self.medium, addr, aliases=extra).start()
                self.modem_endpoints[addr] = f"serial://{m.device_path}?baud=115200"
            self.modems.append(m)

    def _acoustic_stack(self, addr: int) -> dict:
        scn = self.scn
        kind = "s2c" if scn.kind == "s2c" else "ahoi"
        params = dict(scn.driver)
        if kind == "s2c":
            params.setdefault("mode", scn.mode)
        elif "bitrate" not in params:
            params["bitrate"] = scn.channel_config.bitrate_im
        return {"id": kind, "kind": kind, "endpoint": self.modem_endpoints[addr], "params": params}

    def start(self) -> "Testbed":
        scn = self.scn
        try:
            if scn.kind in ("s2c", "ahoi"):
                self._acoustic([1, 2])
                self._node(1, [self._acoustic_stack(1)], [], dst=2)
                self._node(2, [self._acoustic_stack(2)], [])
            elif scn.kind == "csa":
                if scn.transport == "udp":
                    pa, pb = _free_udp_port(), _free_udp_port()
                    ea = f"udp://127.0.0.1:{pb}?bind={pa}"
                    eb = f"udp://127.0.0.1:{pa}?bind={pb}"
                    self._node(1, [{"id": "csa", "kind": "csa", "endpoint": ea}], [], dst=2)
                    self._node(2, [{"id": "csa", "kind": "csa", "endpoint": eb}], [])
                else:
                    b = self._node(2, [{"id": "csa", "kind": "csa", "endpoint": "tcps://127.0.0.1:0"}], [])
                    port = b.drivers["csa"].conn.port
                    self._node(1, [{"id": "csa", "kind": "csa", "endpoint": f"tcp://127.0.0.1:{port}"}],
                               [], dst=2)
                    self.nodes.reverse()
            else:  # twohop: 1 --acoustic-- 2 --CSA/TCP-- 3
                self._acoustic([1, 2], aliases={2: (3,)})
                c = self._node(3, [{"id": "csa", "kind": "csa", "endpoint": "tcps://127.0.0.1:0"}], [])
                port = c.drivers["csa"].conn.port
                ac = self._acoustic_stack(2)
                self._node(2, [ac, {"id": "csa", "kind": "csa", "endpoint": f"tcp://127.0.0.1:{port}"}],
                           [{"dst": "1..2", "stack": ac["id"]}, {"dst": "*", "stack": "csa"}])
                self._node(1, [self._acoustic_stack(1)], [], dst=3)
                self.nodes = [self.nodes[2], self.nodes[1], self.nodes[0]]
        except Exception:
            self.stop()
            raise
        return self

    def stop(self):
        for n in self.nodes:
            n.stop()
        for m in self.modems:
            m.stop()
        if self.medium is not None:
            self.medium.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


@dataclass
class ScenarioResult:
    scenario: str
    mode: str
    measurement: LinkMeasurement
    log: TxRxLog
    streams_ok: int = 0
    events: list = field(default_factory=list)

    def summary_row(self) -> dict:
        m = self.measurement
        return {"scenario": self.scenario, "mode": self.mode, "r_rx_bps": round(m.r_rx, 3),
                "p_dd_s": round(m.p_dd, 4), "loss": round(m.loss, 4), "runs": m.n_runs}


def _dump(out_dir, result: ScenarioResult):
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.log.write_jsonl(out / f"{result.scenario}_{result.mode}.jsonl")
    append_summary(out / "summary.csv", [result.summary_row()])
    m = result.measurement
    with open(out / f"{result.scenario}_{result.mode}.json", "w") as fh:
        json.dump({**result.summary_row(), "r_rx_std": m.r_rx_std, "p_dd_std": m.p_dd_std,
                   "p_dd_image_s": m.p_dd_image, "n_packets": m.n_packets,
                   "streams_ok": result.streams_ok}, fh, indent=2)


def append_summary(path, rows: list[dict]):
    new = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        if new:
            w.writeheader()
        w.writerows(rows)


def run_scenario(scn, runs: Optional[int] = None, out_dir=None, settle: float = 5.0) -> ScenarioResult:
    """Transmit the scenario payload ``runs`` times through the full stack."""
    if not isinstance(scn, Scenario):
        scn = Scenario.load(scn)
    runs = runs or scn.runs
    payload = scn.payload_bytes()
    log = TxRxLog()
    streams_ok = 0
    bed = Testbed(scn)
    bed.start()
    try:
        tx, rx = bed.sender, bed.receiver
        for run in range(runs):
            tx_mark, rx_mark = len(tx.tx_log), len(rx.rx_records)
            job = tx.send_bytes(payload)
            try:
                try:
                    job.done.result(scn.timeout)
                except FutureTimeout:
                    raise ScenarioError(f"{scn.name}: run {run} did not finish within {scn.timeout} s")
                if rx.wait_streams(streams_ok + 1, settle):
                    src, _, data = rx.streams[streams_ok]
                    streams_ok += data == payload
                faults = {n.name: n.faults for n in bed.nodes if n.faults}
                if faults:
                    raise ScenarioError(f"{scn.name}: node failure {faults}")
            finally:
                # keep whatever this run logged, also when it is being aborted
                run_log = TxRxLog.merge(tx.tx_log[tx_mark:], rx.rx_records[rx_mark:], run=run)
                log.records.extend(run_log.records)
        events = [e for n in bed.nodes for e in n.events]
    finally:
        bed.stop()
        if out_dir is not None and log.records:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            log.write_jsonl(Path(out_dir) / f"{scn.name}_stack.partial.jsonl")
    result = ScenarioResult(scn.name, "stack", LinkMeasurement.from_log(log), log, streams_ok, events)
    if out_dir is not None:
        os.remove(Path(out_dir) / f"{scn.name}_stack.partial.jsonl")
    _dump(out_dir, result)
    return result


def run_direct_scenario(scn, runs: Optional[int] = None, out_dir=None) -> ScenarioResult:
    """The same transfer written straight to the emulated modems."""
    if not isinstance(scn, Scenario):
        scn = Scenario.load(scn)
    if scn.kind not in ("s2c", "ahoi"):
        raise ScenarioError(f"direct mode needs an acoustic scenario, not {scn.kind!r}")
    runs = runs or scn.runs
    tclass = TrafficClass.BURST if scn.mode == "burst" else TrafficClass.IM
    packets = app_chunk(scn.payload_bytes(), scn.packet_size - 12, 1, 2, 1, tclass)
    buffered = bool(scn.direct.get("buffered", False))
    log = TxRxLog()
    bed = Testbed(scn)
    bed._acoustic([1, 2])
    try:
        for run in range(runs):
            fresh = [p.copy() for p in packets]
            log.records.extend(run_direct(scn.kind, bed.modem_endpoints[1], bed.modem_endpoints[2],
                                          fresh, mode=scn.mode, buffered=buffered,
                                          run=run, timeout=scn.timeout,
                                          max_burst=scn.driver.get("max_burst", 512)).records)
    finally:
        bed.stop()
    mode = "direct-buffered" if buffered else "direct"
    result = ScenarioResult(scn.name, mode, LinkMeasurement.from_log(log), log)
    _dump(out_dir, result)
    return result


@dataclass
class Comparison:
    stack: ScenarioResult
    direct: ScenarioResult

    @property
    def ratio(self) -> float:
        return self.stack.measurement.r_rx / self.direct.measurement.r_rx


def compare_direct(scn, runs: Optional[int] = None, out_dir=None) -> Comparison:
    if not isinstance(scn, Scenario):
        scn = Scenario.load(scn)
    return Comparison(run_scenario(scn, runs, out_dir), run_direct_scenario(scn, runs, out_dir))


def load_results(out_dir) -> list[dict]:
    path = Path(out_dir) / "summary.csv"
    if not path.exists():
        raise ScenarioError(f"no summary.csv in {out_dir}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


__all__ = ["Comparison", "InsufficientData", "Scenario", "ScenarioError", "ScenarioResult",
           "Testbed", "append_summary", "bundled_scenarios", "compare_direct", "load_results",
           "run_direct_scenario", "run_scenario"]
