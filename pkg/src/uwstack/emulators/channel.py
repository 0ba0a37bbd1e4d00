"""Channel model and the shared virtual medium.

A frame sent at ``start`` occupies its source for ``tx_duration`` and reaches
the destination ``prop_delay + proc_delay`` after it has left the modem.  The
sender learns the outcome one acknowledgement later
(``prop_delay + tx_duration(0, ack_len)``).  Each source transmits one frame
at a time; frames handed over while it is busy queue behind the current one
and go out back to back.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from ..drivers.packet import BROADCAST, Packet, TrafficClass
from ..scheduler import Scheduler

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChannelConfig:
    bitrate_im: float = 976.0
    bitrate_burst: float = 3246.0
    distance: float = 0.0
    sound_speed: float = 1500.0
    loss_prob: float = 0.0
    per_packet_overhead: int = 16
    proc_delay: float = 0.0
    ack_len: int = 2

    def __post_init__(self):
        if self.bitrate_im <= 0 or self.bitrate_burst <= 0:
            raise ValueError("bitrates must be > 0")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be within [0, 1]")
        if self.distance < 0 or self.sound_speed <= 0:
            raise ValueError("distance must be >= 0 and sound_speed > 0")
        if self.per_packet_overhead < 0 or self.proc_delay < 0 or self.ack_len < 0:
            raise ValueError("overhead, proc_delay and ack_len must be >= 0")

    def bitrate(self, tclass: TrafficClass) -> float:
        return self.bitrate_burst if tclass is TrafficClass.BURST else self.bitrate_im

    def replace(self, **changes) -> "ChannelConfig":
        return replace(self, **changes)

    @classmethod
    def for_modem(cls, kind: str, **changes) -> "ChannelConfig":
        """Defaults for an S2C-like or AHOI-like link, with ``changes`` applied."""
        return cls(**{**MODEM_DEFAULTS[kind], **changes})


MODEM_DEFAULTS = {
    "s2c": dict(bitrate_im=976.0, bitrate_burst=3246.0, per_packet_overhead=16),
    "ahoi": dict(bitrate_im=260.0, bitrate_burst=260.0, per_packet_overhead=14),
}


def tx_duration(payload_len: int, overhead: int, bitrate: float) -> float:
    """Seconds on air for ``payload_len`` bytes plus ``overhead`` bytes."""
    if bitrate <= 0:
        raise ValueError("bitrate must be > 0")
    return (payload_len + overhead) * 8.0 / bitrate


def prop_delay(distance: float, sound_speed: float = 1500.0) -> float:
    if sound_speed <= 0:
        raise ValueError("sound_speed must be > 0")
    return distance / sound_speed


def ack_return(cfg: ChannelConfig, tclass: TrafficClass) -> float:
    return prop_delay(cfg.distance, cfg.sound_speed) + tx_duration(0, cfg.ack_len, cfg.bitrate(tclass))


@dataclass
class Delivery:
    """Timeline of one frame on the medium (monotonic seconds)."""

    src: int
    dst: int
    start: float
    tx_end: float
    arrival: Optional[float]
    confirm_at: float
    lost: bool
    known_dst: bool = True

    @property
    def delivered(self) -> bool:
        return self.known_dst and not self.lost


class VirtualMedium:
    """Registry of emulated modems plus the timeline that moves frames between them.

    Attached modems implement ``on_frame(packet, meta)``, called from the
    medium's timeline thread when a frame arrives.
    """

    def __init__(self, default: Optional[ChannelConfig] = None, name: str = "medium",
                 seed: Optional[int] = None):
        self.default = default or ChannelConfig()
        self.name = name
        self.rng = random.Random(seed)
        self.timeline = Scheduler(name=f"medium-{name}").start()
        self.counters: Counter = Counter()
        self._modems: dict[int, object] = {}
        self._pairs: dict[tuple, ChannelConfig] = {}
        self._busy_until: dict[int, float] = {}
        self._lock = threading.Lock()
        self.on_air: list = []     # (src, start, tx_end) when record_air is set
        self.record_air = False

    # -- registry ---------------------------------------------------------

    def attach(self, addr: int, modem):
        with self._lock:
            if addr in self._modems and self._modems[addr] is not modem:
                raise ValueError(f"address {addr} already attached to {self.name}")
            self._modems[addr] = modem

    def detach(self, addr: int):
        with self._lock:
            self._modems.pop(addr, None)

    def readdress(self, old: int, new: int, modem):
        with self._lock:
            if new in self._modems and self._modems[new] is not modem:
                raise ValueError(f"address {new} already attached")
            if self._modems.get(old) is modem:
                del self._modems[old]
            self._modems[new] = modem
            if old in self._busy_until:
                self._busy_until[new] = self._busy_until.pop(old)

    def addresses(self) -> list[int]:
        with self._lock:
            return sorted(self._modems)

    def set_channel(self, a: int, b: int, cfg: ChannelConfig, symmetric: bool = True):
        with self._lock:
            self._pairs[(a, b)] = cfg
            if symmetric:
                self._pairs[(b, a)] = cfg

    def channel(self, src: int, dst: int) -> ChannelConfig:
        return self._pairs.get((src, dst), self.default)

    # -- transmission -----------------------------------------------------

    def deliver(self, src: int, packet: Packet, tclass: Optional[TrafficClass] = None,
                on_sent: Optional[Callable[[], None]] = None,
                on_result: Optional[Callable[[bool], None]] = None,
                meta: Optional[dict] = None) -> Delivery:
        """Put ``packet`` on the medium on behalf of modem ``src``.

        ``on_sent`` fires when the frame has left the source, ``on_result``
        with the delivery outcome once the acknowledgement would be back.
        """
        tclass = tclass or packet.tclass
        dst = packet.dst
        meta = dict(meta or {})
        with self._lock:
            if src not in self._modems:
                raise KeyError(f"source {src} is not attached to {self.name}")
            cfg = self.channel(src, dst)
            now = time.monotonic()
            start = max(now, self._busy_until.get(src, 0.0))
            tx_end = start + tx_duration(len(packet.payload), cfg.per_packet_overhead, cfg.bitrate(tclass))
            self._busy_until[src] = tx_end
            if self.record_air:
                self.on_air.append((src, start, tx_end))
            if dst == BROADCAST:
                targets = [(a, m) for a, m in self._modems.items() if a != src]
            else:
                m = self._modems.get(dst)
                targets = [(dst, m)] if m is not None else []
            known = bool(targets) or dst == BROADCAST
            arrivals = []
            for addr, modem in targets:
                pcfg = self.channel(src, addr)
                lost = self.rng.random() < pcfg.loss_prob
                arrival = tx_end + prop_delay(pcfg.distance, pcfg.sound_speed) + pcfg.proc_delay
                arrivals.append((addr, modem, arrival, lost))
        if dst == BROADCAST:
            lost = False
            arrival = max((a for _, _, a, _ in arrivals), default=tx_end)
            confirm_at = tx_end
        elif arrivals:
            _, _, arrival, lost = arrivals[0]
            confirm_at = arrival + ack_return(cfg, tclass)
        else:
            lost, arrival = True, None
            confirm_at = tx_end + ack_return(cfg, tclass)
        self.counters["frames"] += 1
        for addr, modem, when, dropped in arrivals:
            if dropped:
                self.counters["lost"] += 1
                continue
            copy = packet.copy(src=src, tclass=tclass)
            self.timeline.schedule_at(when, self._arrive, addr, modem, copy, meta)
        if not known:
            self.counters["unknown_dst"] += 1
        if on_sent is not None:
            self.timeline.schedule_at(tx_end, on_sent)
        delivered = known and not lost
        if on_result is not None:
            self.timeline.schedule_at(confirm_at, on_result, delivered)
        return Delivery(src, dst, start, tx_end, None if lost else arrival, confirm_at, lost, known)

    def _arrive(self, addr, modem, packet, meta):
        self.counters["arrivals"] += 1
        try:
            modem.on_frame(packet, meta)
        except Exception:
            log.exception("%s: modem %s failed to take a frame", self.name, addr)

    def close(self):
        self.timeline.stop()


_mediums: dict[str, VirtualMedium] = {}
_mediums_lock = threading.Lock()


def get_medium(name: str, default: Optional[ChannelConfig] = None, seed=None) -> VirtualMedium:
    """Named in-process medium (``shm://name``); created on first use."""
    with _mediums_lock:
        m = _mediums.get(name)
        if m is None:
            m = _mediums[name] = VirtualMedium(default, name=name, seed=seed)
        return m


def drop_medium(name: str):
    with _mediums_lock:
        m = _mediums.pop(name, None)
    if m is not None:
        m.close()


def deliver(m: VirtualMedium, src: int, packet: Packet, tclass=None, **kw) -> Delivery:
    return m.deliver(src, packet, tclass, **kw)


def analytic_delivery_time(cfg: ChannelConfig, payload_len: int, tclass=TrafficClass.IM) -> float:
    """proc_delay + tx_duration + prop_delay for an idle source."""
    return (cfg.proc_delay + tx_duration(payload_len, cfg.per_packet_overhead, cfg.bitrate(tclass))
            + prop_delay(cfg.distance, cfg.sound_speed))
