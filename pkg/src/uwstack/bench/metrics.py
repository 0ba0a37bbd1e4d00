"""Receiver goodput and delivery delay computed from per-packet logs.

``compute_rrx`` divides the delivered payload bits by the delivery window
``t_last - t_first + mean gap``.  Adding one mean inter-delivery gap makes
the window cover as many packet intervals as there are packets, so a
steady stream of N packets every T seconds yields exactly ``bits / T``.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional


class InsufficientData(ValueError):
    pass


@dataclass
class TxRxRecord:
    pkt: str
    t_enq: Optional[float] = None
    t_sent: Optional[float] = None
    t_dlv: Optional[float] = None
    bits: int = 0
    run: int = 0

    @property
    def delivered(self) -> bool:
        return self.t_dlv is not None

    @property
    def delay(self) -> Optional[float]:
        if self.t_dlv is None or self.t_enq is None:
            return None
        return self.t_dlv - self.t_enq

    def as_dict(self) -> dict:
        return {"pkt": self.pkt, "t_enq": self.t_enq, "t_sent": self.t_sent,
                "t_dlv": self.t_dlv, "bits": self.bits, "run": self.run}


@dataclass
class TxRxLog:
    records: list[TxRxRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def add(self, pkt: str, t_enq=None, t_sent=None, t_dlv=None, bits: int = 0, run: int = 0):
        self.records.append(TxRxRecord(pkt, t_enq, t_sent, t_dlv, bits, run))

    @property
    def delivered(self) -> list[TxRxRecord]:
        return [r for r in self.records if r.delivered]

    @property
    def undelivered(self) -> int:
        return sum(not r.delivered for r in self.records)

    def runs(self) -> dict[int, "TxRxLog"]:
        out: dict[int, TxRxLog] = {}
        for r in self.records:
            out.setdefault(r.run, TxRxLog()).records.append(r)
        return dict(sorted(out.items()))

    @classmethod
    def merge(cls, tx: Iterable[dict], rx: Iterable[dict], run: int = 0) -> "TxRxLog":
        """Join sender and receiver records on packet id.

        Packets the receiver saw more than once keep their first delivery.
        """
        first_rx: dict[str, dict] = {}
        for r in rx:
            first_rx.setdefault(r["pkt"], r)
        log = cls()
        seen = set()
        for t in tx:
            if t["pkt"] in seen:
                continue
            seen.add(t["pkt"])
            r = first_rx.pop(t["pkt"], None)
            log.add(t["pkt"], t.get("t_enq"), t.get("t_sent"),
                    r["t_dlv"] if r else None, t.get("bits", r["bits"] if r else 0), run)
        for pkt, r in first_rx.items():  # delivered without a sender record
            log.add(pkt, None, None, r["t_dlv"], r.get("bits", 0), run)
        return log

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.as_dict()) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "TxRxLog":
        log = cls()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                d = json.loads(line)
                log.add(d["pkt"], d.get("t_enq"), d.get("t_sent"), d.get("t_dlv"),
                        d.get("bits", 0), d.get("run", 0))
        return log


def compute_rrx(log) -> float:
    """Delivered payload bits per second over the delivery window, in bit/s."""
    recs = sorted((r for r in log if r.t_dlv is not None), key=lambda r: r.t_dlv)
    if len(recs) < 2:
        raise InsufficientData(f"need at least 2 delivered packets, got {len(recs)}")
    span = recs[-1].t_dlv - recs[0].t_dlv
    mean_gap = span / (len(recs) - 1)
    window = span + mean_gap
    if window <= 0:
        raise InsufficientData("all deliveries share one timestamp")
    return sum(r.bits for r in recs) / window


def compute_pdd(log) -> float:
    """Mean of t_dlv - t_enq over delivered packets, in seconds."""
    delays = [r.delay for r in log if r.delay is not None]
    if not delays:
        raise InsufficientData("no delivered packets")
    return statistics.fmean(delays)


def image_delay(log) -> float:
    """First enqueue to last delivery of one transfer (the per-image reading of P_dd)."""
    enq = [r.t_enq for r in log if r.t_enq is not None]
    dlv = [r.t_dlv for r in log if r.t_dlv is not None]
    if not enq or not dlv:
        raise InsufficientData("no delivered packets")
    return max(dlv) - min(enq)


@dataclass
class LinkMeasurement:
    r_rx: float
    p_dd: float
    n_packets: int
    n_runs: int
    r_rx_std: float = 0.0
    p_dd_std: float = 0.0
    p_dd_image: Optional[float] = None
    lost: int = 0

    def __post_init__(self):
        if self.r_rx < 0 or self.p_dd < 0:
            raise ValueError("r_rx and p_dd must be >= 0")
        if self.n_runs < 1:
            raise ValueError("a measurement aggregates at least one run")

    @property
    def loss(self) -> float:
        total = self.n_packets + self.lost
        return self.lost / total if total else 0.0

    @classmethod
    def from_log(cls, log: TxRxLog) -> "LinkMeasurement":
        """Per-run R_RX and P_dd, averaged across runs."""
        runs = [r for r in log.runs().values() if len(r.delivered) >= 2]
        if not runs:
            raise InsufficientData("no run delivered two packets")
        rrx = [compute_rrx(r) for r in runs]
        pdd = [compute_pdd(r) for r in runs]
        img = [image_delay(r) for r in runs]
        return cls(
            r_rx=statistics.fmean(rrx),
            p_dd=statistics.fmean(pdd),
            n_packets=len(log.delivered),
            n_runs=len(runs),
            r_rx_std=statistics.stdev(rrx) if len(rrx) > 1 else 0.0,
            p_dd_std=statistics.stdev(pdd) if len(pdd) > 1 else 0.0,
            p_dd_image=statistics.fmean(img),
            lost=log.undelivered,
        )
