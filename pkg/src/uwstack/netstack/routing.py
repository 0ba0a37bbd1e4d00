"""Per-packet choice among the protocol stacks of a multimodal node."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence


class NoRouteError(LookupError):
    pass


@dataclass(frozen=True)
class RouteRule:
    """``lo..hi`` (inclusive) -> stack; ``lo is None`` matches every destination."""

    stack: str
    lo: Optional[int] = None
    hi: Optional[int] = None

    @property
    def is_default(self) -> bool:
        return self.lo is None

    def matches(self, dst: int) -> bool:
        return self.lo is None or self.lo <= dst <= self.hi

    @classmethod
    def parse(cls, dst, stack: str) -> "RouteRule":
        """Accepts ``"*"``, ``"3"``, ``3`` or ``"1..5"``."""
        if isinstance(dst, int):
            return cls(stack, dst, dst)
        text = str(dst).strip()
        if text in ("*", "all"):
            return cls(stack)
        lo, sep, hi = text.partition("..")
        lo_i = int(lo)
        hi_i = int(hi) if sep else lo_i
        if hi_i < lo_i:
            raise ValueError(f"empty destination range {text!r}")
        return cls(stack, lo_i, hi_i)


def multidest_route(dst, rules: Sequence[RouteRule]) -> str:
    """First matching rule wins.  ``dst`` is an address or a packet."""
    dst = getattr(dst, "dst", dst)
    if not rules:
        raise NoRouteError("no routing rules")
    for rule in rules:
        if rule.matches(dst):
            return rule.stack
    raise NoRouteError(f"no route to {dst}")
