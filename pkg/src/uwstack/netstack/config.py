"""Node configuration files.

A node file is TOML with four kinds of tables::

    [node]
    address = 2
    to_rx_ms = 10              # optional, scheduler polling period
    log = "logs/node_b.jsonl"  # optional, per-packet records

    [[stack]]
    id = "ahoi0"
    kind = "ahoi"              # s2c | ahoi | csa
    endpoint = "serial:///dev/ttyUSB0?baud=9600"
    params = { retries = 1 }   # driver keyword arguments

    [[route]]
    dst = "1..5"               # address, "lo..hi" or "*"
    stack = "ahoi0"

    [app]
    packet_size = 32           # bytes per packet, application header included
    dst = 3                    # destination of ingested streams
    ingest = "tcps://0.0.0.0:9500"   # optional: tcps:// or udp:// listener
    output_dir = "received"    # optional: completed streams are written here
    window = 1                 # packets in flight per stream
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .app import APP_HEADER_LEN
from .routing import RouteRule

STACK_KINDS = ("s2c", "ahoi", "csa")


class ConfigError(ValueError):
    pass


@dataclass
class StackConfig:
    id: str
    kind: str
    endpoint: str
    params: dict = field(default_factory=dict)


@dataclass
class AppConfig:
    packet_size: int = 64
    dst: Optional[int] = None
    ingest: Optional[str] = None
    output_dir: Optional[str] = None
    window: int = 1
    tclass: str = "im"

    @property
    def chunk_payload(self) -> int:
        return self.packet_size - APP_HEADER_LEN


@dataclass
class NodeConfig:
    address: int
    stacks: list[StackConfig]
    routes: list[RouteRule]
    app: AppConfig = field(default_factory=AppConfig)
    to_rx: float = 0.01
    log: Optional[str] = None
    name: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0 <= self.address < 0xFFFF:
            raise ConfigError(f"node address {self.address} out of range")
        if not self.stacks:
            raise ConfigError("a node needs at least one stack")
        ids = [s.id for s in self.stacks]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise ConfigError(f"duplicate stack ids {sorted(dup)}")
        for s in self.stacks:
            if s.kind not in STACK_KINDS:
                raise ConfigError(f"stack {s.id}: unknown kind {s.kind!r}")
        for r in self.routes:
            if r.stack not in ids:
                raise ConfigError(f"route to unknown stack {r.stack!r}")
        if self.app.packet_size <= APP_HEADER_LEN:
            raise ConfigError(f"packet_size must exceed the {APP_HEADER_LEN} B application header")
        if self.app.window < 1:
            raise ConfigError("window must be >= 1")
        if self.to_rx <= 0:
            raise ConfigError("to_rx_ms must be > 0")

    def stack(self, ident: str) -> StackConfig:
        for s in self.stacks:
            if s.id == ident:
                return s
        raise KeyError(ident)

    @classmethod
    def from_dict(cls, data: dict) -> "NodeConfig":
        node = data.get("node", {})
        if "address" not in node:
            raise ConfigError("[node] address is required")
        try:
            stacks = [StackConfig(s["id"], s["kind"], s["endpoint"], dict(s.get("params", {})))
                      for s in data.get("stack", [])]
        except KeyError as exc:
            raise ConfigError(f"[[stack]] entry without {exc}") from None
        try:
            routes = [RouteRule.parse(r.get("dst", "*"), r["stack"]) for r in data.get("route", [])]
        except KeyError as exc:
            raise ConfigError(f"[[route]] entry without {exc}") from None
        if not routes and len(stacks) == 1:
            routes = [RouteRule(stacks[0].id)]
        known = set(AppConfig.__dataclass_fields__)
        app_raw = data.get("app", {})
        extra = set(app_raw) - known
        if extra:
            raise ConfigError(f"unknown [app] keys {sorted(extra)}")
        return cls(
            address=int(node["address"]),
            stacks=stacks,
            routes=routes,
            app=AppConfig(**app_raw),
            to_rx=float(node.get("to_rx_ms", 10)) / 1000.0,
            log=node.get("log"),
            name=node.get("name"),
        )

    @classmethod
    def loads(cls, text: str) -> "NodeConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(exc)) from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "NodeConfig":
        return cls.loads(Path(path).read_text())
