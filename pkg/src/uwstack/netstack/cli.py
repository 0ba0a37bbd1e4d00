"""``uwnode``: run one node from a config file."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
from pathlib import Path

from .config import ConfigError, NodeConfig
from .node import NodeStartError, node_run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uwnode", description="Run a network node.")
    ap.add_argument("--config", required=True, help="node TOML file")
    ap.add_argument("--send", metavar="FILE", help="send FILE to [app] dst, then keep running")
    ap.add_argument("--dst", type=int, help="override [app] dst for --send")
    ap.add_argument("--exit-after-send", action="store_true",
                    help="stop once every packet of --send has a transmission result")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    def on_stream(src, stream_id, data):
        print(f"received stream {stream_id} from {src}: {len(data)} bytes", flush=True)

    try:
        cfg = NodeConfig.load(args.config)
        node = node_run(cfg, on_stream=on_stream)
    except (ConfigError, OSError, NodeStartError) as exc:
        print(f"uwnode: {exc}", file=sys.stderr)
        return 2
    where = f", ingest port {node.ingest_port}" if node.ingest_port else ""
    print(f"node {node.address} up with stacks {', '.join(node.drivers)}{where}", flush=True)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        if args.send:
            job = node.send_bytes(Path(args.send).read_bytes(), dst=args.dst)
            if args.exit_after_send:
                job.done.result()
                print(f"sent {len(job.packets)} packets, "
                      f"{sum(job.results.values())} confirmed")
                return 0 if job.ok else 1
        while not stop.wait(0.5):
            pass
    except KeyboardInterrupt:
        pass
    finally:
        node.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
