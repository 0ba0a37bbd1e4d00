"""Application layer: splitting byte streams into packets and putting them back together."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterable, Optional, Union

from ..drivers.packet import Packet, TrafficClass

APP_HEADER = struct.Struct(">HIIH")
APP_HEADER_LEN = APP_HEADER.size  # 12


class StreamError(ValueError):
    pass


@dataclass(frozen=True)
class AppHeader:
    stream_id: int
    chunk_index: int
    total_chunks: int
    chunk_len: int

    def pack(self) -> bytes:
        return APP_HEADER.pack(self.stream_id, self.chunk_index, self.total_chunks, self.chunk_len)

    @classmethod
    def unpack(cls, payload: bytes) -> tuple["AppHeader", bytes]:
        if len(payload) < APP_HEADER_LEN:
            raise StreamError("payload shorter than the application header")
        hdr = cls(*APP_HEADER.unpack_from(payload))
        body = payload[APP_HEADER_LEN:]
        if hdr.chunk_len != len(body) or not hdr.chunk_index < hdr.total_chunks:
            raise StreamError(f"inconsistent application header {hdr}")
        return hdr, body


def app_chunk(stream: bytes, chunk_payload: int, src: int = 0, dst: int = 0,
              stream_id: int = 0, tclass: TrafficClass = TrafficClass.IM,
              first_seq: int = 0) -> list[Packet]:
    """Cut ``stream`` into ``ceil(len / chunk_payload)`` packets carrying an AppHeader."""
    if chunk_payload <= 0:
        raise ValueError("chunk_payload must be > 0")
    total = math.ceil(len(stream) / chunk_payload)
    packets = []
    for i in range(total):
        body = stream[i * chunk_payload:(i + 1) * chunk_payload]
        hdr = AppHeader(stream_id & 0xFFFF, i, total, len(body))
        packets.append(Packet(src, dst, first_seq + i, tclass, hdr.pack() + body))
    return packets


@dataclass
class Incomplete:
    stream_id: int
    total: int
    missing: list[int]


class StreamAssembly:
    """Chunks of one stream collected so far."""

    def __init__(self, stream_id: int):
        self.stream_id = stream_id
        self.total: Optional[int] = None
        self.chunks: dict[int, bytes] = {}
        self.duplicates = 0

    def add(self, hdr: AppHeader, body: bytes):
        if hdr.stream_id != self.stream_id:
            raise StreamError(f"chunk of stream {hdr.stream_id} in stream {self.stream_id}")
        if self.total is None:
            self.total = hdr.total_chunks
        elif self.total != hdr.total_chunks:
            raise StreamError(f"stream {self.stream_id}: total chunks {hdr.total_chunks} "
                              f"conflicts with {self.total}")
        if hdr.chunk_index in self.chunks:
            self.duplicates += 1
            return
        self.chunks[hdr.chunk_index] = body

    @property
    def complete(self) -> bool:
        return self.total is not None and len(self.chunks) == self.total

    def missing(self) -> list[int]:
        if self.total is None:
            return []
        return [i for i in range(self.total) if i not in self.chunks]

    def result(self) -> Union[bytes, Incomplete]:
        if not self.complete:
            return Incomplete(self.stream_id, self.total or 0, self.missing())
        return b"".join(self.chunks[i] for i in range(self.total))


def app_reassemble(packets: Iterable[Packet]) -> Union[bytes, Incomplete]:
    """Rebuild one stream; duplicates are ignored and order does not matter."""
    asm = None
    for p in packets:
        hdr, body = AppHeader.unpack(p.payload)
        if asm is None:
            asm = StreamAssembly(hdr.stream_id)
        asm.add(hdr, body)
    if asm is None:
        return b""
    return asm.result()


class Reassembler:
    """Incremental reassembly of many streams, keyed by (source, stream id)."""

    def __init__(self):
        self.streams: dict[tuple[int, int], StreamAssembly] = {}
        self.errors = 0

    def add(self, p: Packet) -> Optional[tuple[tuple[int, int], bytes]]:
        try:
            hdr, body = AppHeader.unpack(p.payload)
        except StreamError:
            self.errors += 1
            return None
        key = (p.src, hdr.stream_id)
        asm = self.streams.get(key)
        if asm is None:
            asm = self.streams[key] = StreamAssembly(hdr.stream_id)
        try:
            asm.add(hdr, body)
        except StreamError:
            self.errors += 1
            return None
        if asm.complete:
            del self.streams[key]
            return key, asm.result()
        return None
