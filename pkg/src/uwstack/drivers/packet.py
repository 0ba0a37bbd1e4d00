from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

BROADCAST = 255


class TrafficClass(enum.Enum):
    IM = "IM"
    BURST = "BURST"
    DATAGRAM = "DATAGRAM"


class PacketError(ValueError):
    pass


class PacketSizeError(PacketError):
    pass


class BackpressureError(PacketError):
    pass


class FormatError(PacketError):
    pass


@dataclass
class Packet:
    """A unit of data moving through the stack.

    Timestamps are monotonic seconds and do not take part in equality.
    """

    src: int
    dst: int
    seq: int = 0
    tclass: TrafficClass = TrafficClass.IM
    payload: bytes = b""
    t_created: Optional[float] = field(default=None, compare=False)
    t_sent: Optional[float] = field(default=None, compare=False)
    t_delivered: Optional[float] = field(default=None, compare=False)
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.src < 0 or self.dst < 0:
            raise PacketError("addresses must be >= 0")
        self.payload = bytes(self.payload)

    def copy(self, **changes) -> "Packet":
        changes.setdefault("meta", dict(self.meta))
        return replace(self, **changes)

    @property
    def bits(self) -> int:
        return 8 * len(self.payload)
