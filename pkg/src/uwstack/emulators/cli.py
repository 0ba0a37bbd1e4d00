"""``uwemu``: serve emulated modems, or a shared medium for emulators in other processes."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading

from .channel import ChannelConfig, get_medium
from .modems import AhoiEmulator, S2CEmulator
from .remote import MediumServer, RemoteMedium

MODEMS = {"s2c": S2CEmulator, "ahoi": AhoiEmulator}


def _channel_args(ap: argparse.ArgumentParser):
    g = ap.add_argument_group("channel")
    g.add_argument("--bitrate-im", type=float, help="IM bitrate, bit/s (s2c 976, ahoi 260)")
    g.add_argument("--bitrate-burst", type=float, help="burst bitrate, bit/s (s2c 3246)")
    g.add_argument("--distance", type=float, default=0.0, help="metres")
    g.add_argument("--sound-speed", type=float, default=1500.0)
    g.add_argument("--loss", type=float, default=0.0, help="per-frame loss probability")
    g.add_argument("--overhead", type=int, help="per-packet overhead, bytes (s2c 16, ahoi 14)")
    g.add_argument("--proc-delay", type=float, default=0.0, help="seconds")
    g.add_argument("--ack-len", type=int, default=2, help="acknowledgement length, bytes")
    g.add_argument("--seed", type=int)


def channel_from_args(args) -> ChannelConfig:
    given = {"bitrate_im": args.bitrate_im, "bitrate_burst": args.bitrate_burst,
             "per_packet_overhead": args.overhead}
    return ChannelConfig.for_modem(
        "ahoi" if args.cmd == "ahoi" else "s2c",
        **{k: v for k, v in given.items() if v is not None},
        distance=args.distance, sound_speed=args.sound_speed, loss_prob=args.loss,
        proc_delay=args.proc_delay, ack_len=args.ack_len)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uwemu", description="Emulated acoustic modems.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for kind in MODEMS:
        p = sub.add_parser(kind, help=f"serve {kind} modems")
        p.add_argument("--listen", action="append", required=True,
                       help="endpoint per modem (tcps://host:port, serial://pty, ...); repeatable")
        p.add_argument("--addr", action="append", type=int, required=True,
                       help="modem address, one per --listen")
        p.add_argument("--alias", action="append", default=[],
                       help="ADDR:EXTRA, extra address the modem ADDR also receives for")
        p.add_argument("--medium", default="shm://default",
                       help="shm://name (in-process) or tcp://host:port (uwemu medium)")
        p.add_argument("--ctrl-latency", type=float, default=0.0,
                       help="one-way delay on the control connection, seconds")
        _channel_args(p)
    m = sub.add_parser("medium", help="serve a shared medium over TCP")
    m.add_argument("--listen", default="tcp://127.0.0.1:7700")
    _channel_args(m)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _host_port(url: str) -> tuple[str, int]:
    host, _, port = url.split("://", 1)[-1].rpartition(":")
    return host or "127.0.0.1", int(port)


def _wait_forever():
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        while not stop.wait(0.5):
            pass
    except KeyboardInterrupt:
        pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.cmd == "medium":
        host, port = _host_port(args.listen)
        server = MediumServer(host, port, channel=channel_from_args(args)).start()
        print(f"medium listening on {host}:{server.port}", flush=True)
        _wait_forever()
        server.stop()
        return 0

    if len(args.listen) != len(args.addr):
        print("uwemu: give one --addr per --listen", file=sys.stderr)
        return 2
    aliases: dict[int, list[int]] = {}
    for spec in args.alias:
        a, _, extra = spec.partition(":")
        aliases.setdefault(int(a), []).append(int(extra))
    mep = args.medium
    if mep.startswith("tcp://"):
        medium = RemoteMedium(*_host_port(mep))
    elif mep.startswith("shm://"):
        medium = get_medium(mep[len("shm://"):], channel_from_args(args), seed=args.seed)
    else:
        print(f"uwemu: unsupported medium {mep!r}", file=sys.stderr)
        return 2
    modems = []
    try:
        for listen, addr in zip(args.listen, args.addr):
            if listen.startswith("tcp://"):
                listen = "tcps://" + listen[len("tcp://"):]   # a modem always listens
            modem = MODEMS[args.cmd](listen, medium, addr, ctrl_latency=args.ctrl_latency,
                                     aliases=aliases.get(addr, ())).start()
            modems.append(modem)
            where = modem.device_path or (f"port {modem.port}" if modem.port else listen)
            print(f"{args.cmd} modem {addr} on {where}", flush=True)
    except (OSError, ValueError) as exc:
        print(f"uwemu: {exc}", file=sys.stderr)
        for modem in modems:
            modem.stop()
        return 2
    _wait_forever()
    for modem in modems:
        modem.stop()
    medium.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
