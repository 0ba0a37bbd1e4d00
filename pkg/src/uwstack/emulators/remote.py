"""Sharing one virtual medium between processes.

``MediumServer`` owns a :class:`VirtualMedium` and accepts TCP clients that
speak newline-delimited JSON.  ``RemoteMedium`` is the client; it offers the
subset of the VirtualMedium interface the emulated modems use, so a modem
does not care whether its medium lives in-process or behind a socket.

Requests carry ``op`` and ``req``; the server answers ``{"ev": "reply",
"req": ..., "ok": ..., "error": ...}``.  Asynchronous events are
``sent``/``result`` for deliveries the client asked about and ``frame`` for
arrivals at addresses the client has attached.
"""

from __future__ import annotations

import itertools
import json
import logging
import socket
import socketserver
import threading
from concurrent.futures import Future
from typing import Callable, Optional

from ..drivers.packet import Packet, TrafficClass
from ..scheduler import Scheduler
from .channel import ChannelConfig, VirtualMedium

log = logging.getLogger(__name__)


def _packet_to_json(p: Packet) -> dict:
    return {"src": p.src, "dst": p.dst, "seq": p.seq, "tclass": p.tclass.value,
            "payload": p.payload.hex()}


def _packet_from_json(d: dict) -> Packet:
    return Packet(d["src"], d["dst"], d.get("seq", 0), TrafficClass(d.get("tclass", "IM")),
                  bytes.fromhex(d["payload"]))


class _Proxy:
    """Stands in for a remote modem inside the server's medium."""

    def __init__(self, handler: "_ClientHandler", addr: int):
        self.handler = handler
        self.addr = addr

    def on_frame(self, p: Packet, meta: dict):
        self.handler.send({"ev": "frame", "addr": self.addr, "packet": _packet_to_json(p),
                           "meta": meta})


class _ClientHandler(socketserver.StreamRequestHandler):
    def setup(self):
        super().setup()
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._wlock = threading.Lock()
        self.proxies: dict[int, _Proxy] = {}

    def send(self, msg: dict):
        data = (json.dumps(msg) + "\n").encode()
        try:
            with self._wlock:
                self.wfile.write(data)
                self.wfile.flush()
        except OSError:
            pass

    def handle(self):
        medium: VirtualMedium = self.server.medium
        for line in self.rfile:
            try:
                msg = json.loads(line)
            except ValueError:
                continue
            op = msg.get("op")
            req = msg.get("req")
            try:
                if op == "attach":
                    proxy = self.proxies.get(msg["addr"]) or _Proxy(self, msg["addr"])
                    medium.attach(msg["addr"], proxy)
                    self.proxies[msg["addr"]] = proxy
                elif op == "detach":
                    if msg["addr"] in self.proxies:
                        medium.detach(msg["addr"])
                        del self.proxies[msg["addr"]]
                elif op == "readdress":
                    proxy = self.proxies.pop(msg["old"])
                    medium.readdress(msg["old"], msg["new"], proxy)
                    proxy.addr = msg["new"]
                    self.proxies[msg["new"]] = proxy
                elif op == "deliver":
                    self._deliver(medium, msg)
                    continue
                else:
                    raise ValueError(f"unknown op {op!r}")
            except (KeyError, ValueError) as exc:
                self.send({"ev": "reply", "req": req, "ok": False, "error": str(exc)})
                continue
            self.send({"ev": "reply", "req": req, "ok": True})

    def _deliver(self, medium: VirtualMedium, msg: dict):
        ident = msg["id"]
        p = _packet_from_json(msg["packet"])
        on_sent = (lambda: self.send({"ev": "sent", "id": ident})) if msg.get("want_sent") else None
        on_result = ((lambda ok: self.send({"ev": "result", "id": ident, "ok": ok}))
                     if msg.get("want_result") else None)
        try:
            medium.deliver(msg["src"], p, p.tclass, on_sent=on_sent, on_result=on_result,
                           meta=msg.get("meta"))
        except KeyError as exc:
            log.warning("medium: %s", exc)

    def finish(self):
        for addr in list(self.proxies):
            self.server.medium.detach(addr)
        super().finish()


class MediumServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 medium: Optional[VirtualMedium] = None, channel: Optional[ChannelConfig] = None):
        self.medium = medium or VirtualMedium(channel, name="server")
        super().__init__((host, port), _ClientHandler)
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> "MediumServer":
        self._thread = threading.Thread(target=self.serve_forever, name="medium-server", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()
        self.medium.close()


class RemoteMedium:
    """Client side of a :class:`MediumServer`."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(None)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.rfile = self.sock.makefile("rb")
        self.timeout = timeout
        self.timeline = Scheduler(name="remote-medium").start()
        self._wlock = threading.Lock()
        self._ids = itertools.count(1)
        self._replies: dict[int, Future] = {}
        self._callbacks: dict[int, tuple[Optional[Callable], Optional[Callable]]] = {}
        self._modems: dict[int, object] = {}
        self._lock = threading.Lock()
        self._reader = threading.Thread(target=self._read_loop, name="remote-medium-rx", daemon=True)
        self._reader.start()

    def _send(self, msg: dict):
        data = (json.dumps(msg) + "\n").encode()
        with self._wlock:
            self.sock.sendall(data)

    def _request(self, msg: dict):
        req = next(self._ids)
        fut: Future = Future()
        with self._lock:
            self._replies[req] = fut
        self._send(dict(msg, req=req))
        reply = fut.result(self.timeout)
        if not reply.get("ok"):
            raise ValueError(reply.get("error", "request failed"))

    def attach(self, addr: int, modem):
        self._request({"op": "attach", "addr": addr})
        self._modems[addr] = modem

    def detach(self, addr: int):
        self._modems.pop(addr, None)
        try:
            self._request({"op": "detach", "addr": addr})
        except (OSError, ValueError, TimeoutError):
            pass

    def readdress(self, old: int, new: int, modem):
        self._request({"op": "readdress", "old": old, "new": new})
        self._modems.pop(old, None)
        self._modems[new] = modem

    def deliver(self, src: int, packet: Packet, tclass=None, on_sent=None, on_result=None, meta=None):
        ident = next(self._ids)
        with self._lock:
            self._callbacks[ident] = (on_sent, on_result)
        p = packet.copy(tclass=tclass or packet.tclass)
        self._send({"op": "deliver", "id": ident, "src": src, "packet": _packet_to_json(p),
                    "meta": meta or {}, "want_sent": on_sent is not None,
                    "want_result": on_result is not None})

    def _read_loop(self):
        for line in self.rfile:
            try:
                msg = json.loads(line)
            except ValueError:
                continue
            ev = msg.get("ev")
            if ev == "reply":
                with self._lock:
                    fut = self._replies.pop(msg.get("req"), None)
                if fut is not None:
                    fut.set_result(msg)
            elif ev in ("sent", "result"):
                with self._lock:
                    cbs = self._callbacks.get(msg["id"])
                    if cbs is None:
                        continue
                    on_sent, on_result = cbs
                    if ev == "result" or on_result is None:
                        del self._callbacks[msg["id"]]
                try:
                    if ev == "sent" and on_sent is not None:
                        on_sent()
                    elif ev == "result" and on_result is not None:
                        on_result(msg["ok"])
                except Exception:
                    log.exception("remote medium callback failed")
            elif ev == "frame":
                modem = self._modems.get(msg["addr"])
                if modem is not None:
                    try:
                        modem.on_frame(_packet_from_json(msg["packet"]), msg.get("meta") or {})
                    except Exception:
                        log.exception("modem %s failed to take a frame", msg["addr"])

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self.timeline.stop()
