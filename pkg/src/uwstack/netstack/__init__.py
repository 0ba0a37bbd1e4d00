"""Node assembly: application layer, multi-destination routing and relaying."""

from .app import (APP_HEADER_LEN, AppHeader, Incomplete, Reassembler, StreamError,
                  app_chunk, app_reassemble)
from .config import AppConfig, ConfigError, NodeConfig, StackConfig
from .node import Node, NodeStartError, SendJob, node_run, packet_id, wallclock
from .routing import NoRouteError, RouteRule, multidest_route

__all__ = [
    "APP_HEADER_LEN", "AppConfig", "AppHeader", "ConfigError", "Incomplete", "NoRouteError",
    "Node", "NodeConfig", "NodeStartError", "Reassembler", "RouteRule", "SendJob",
    "StackConfig", "StreamError", "app_chunk", "app_reassemble", "multidest_route",
    "node_run", "packet_id", "wallclock",
]
