"""Byte transports between a driver and its device.

Endpoint strings::

    tcp://host:port              TCP client
    tcps://bind:port             TCP server, accepts one peer at a time
    udp://host:port?bind=port    UDP, sends to host:port, receives on bind
    serial://path?baud=115200    serial device (or pty slave)
    pipe://name                  in-process duplex pipe (first opener is side A)

Reads never block: :meth:`Connection.read_available` returns ``b""`` when
nothing is buffered and raises :class:`EndOfStream` once the transport is
closed.  Reader threads use :meth:`Connection.wait_readable` to sleep until
data arrives.
"""

from __future__ import annotations

import errno
import os
import select
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Optional
from urllib.parse import parse_qs, urlsplit

KINDS = ("tcp-client", "tcp-server", "udp", "serial", "pipe")
_SCHEMES = {"tcp": "tcp-client", "tcps": "tcp-server", "udp": "udp",
            "serial": "serial", "pipe": "pipe"}

RETRY_DELAYS = (0.25, 0.5, 1.0)


class ConnectorError(OSError):
    pass


class OpenFailure(ConnectorError):
    def __init__(self, endpoint, reason):
        super().__init__(f"cannot open {endpoint}: {reason}")
        self.endpoint = endpoint


class WriteFailure(ConnectorError):
    pass


class EndOfStream(ConnectorError):
    """The transport was closed; distinct from 'no data yet'."""


@dataclass(frozen=True)
class Endpoint:
    kind: str
    host: str = ""
    port: int = 0
    path: str = ""
    baud: int = 0
    bind_host: str = ""
    bind_port: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown endpoint kind {self.kind!r}")
        if self.kind in ("tcp-client", "tcp-server", "udp"):
            if not 1 <= self.port <= 65535 and not (self.kind == "tcp-server" and self.port == 0):
                raise ValueError(f"port out of range: {self.port}")
        if self.kind == "udp" and self.bind_port and not 0 <= self.bind_port <= 65535:
            raise ValueError(f"bind port out of range: {self.bind_port}")
        if self.kind == "serial" and self.baud <= 0:
            raise ValueError("baud must be > 0")
        if self.kind in ("serial", "pipe") and not self.path:
            raise ValueError(f"{self.kind} endpoint needs a path/name")

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        parts = urlsplit(text)
        kind = _SCHEMES.get(parts.scheme)
        if kind is None:
            raise ValueError(f"unsupported endpoint scheme in {text!r}")
        query = parse_qs(parts.query)
        if kind in ("serial", "pipe"):
            path = parts.netloc + parts.path
            baud = int(query.get("baud", ["115200"])[0]) if kind == "serial" else 0
            return cls(kind, path=path, baud=baud)
        host = parts.hostname or ("" if kind == "tcp-server" else "127.0.0.1")
        try:
            port = parts.port or 0
        except ValueError as exc:
            raise ValueError(f"bad port in {text!r}") from exc
        bind_host, bind_port = "", 0
        if kind == "udp" and "bind" in query:
            b = query["bind"][0]
            if ":" in b:
                bind_host, _, bp = b.rpartition(":")
                bind_port = int(bp)
            else:
                bind_port = int(b)
        return cls(kind, host=host, port=port, bind_host=bind_host, bind_port=bind_port)

    def __str__(self):
        if self.kind == "serial":
            return f"serial://{self.path}?baud={self.baud}"
        if self.kind == "pipe":
            return f"pipe://{self.path}"
        scheme = {"tcp-client": "tcp", "tcp-server": "tcps", "udp": "udp"}[self.kind]
        s = f"{scheme}://{self.host}:{self.port}"
        if self.kind == "udp" and self.bind_port:
            s += f"?bind={self.bind_host + ':' if self.bind_host else ''}{self.bind_port}"
        return s


@dataclass
class ConnectorStats:
    bytes_in: int = 0
    bytes_out: int = 0
    opened_at: float = field(default_factory=time.time)


class Connection:
    """Base class; one reader thread and one writer thread may share it."""

    message_oriented = False

    def __init__(self, endpoint: Endpoint):
        self.endpoint = endpoint
        self.stats = ConnectorStats()
        self.closed = False
        self._wlock = threading.Lock()

    def write_bytes(self, data: bytes) -> int:
        if self.closed:
            raise WriteFailure(f"{self.endpoint} is closed")
        if not data:
            return 0
        with self._wlock:
            n = self._write(bytes(data))
        self.stats.bytes_out += n
        return n

    def read_available(self, max_bytes: int = 65536) -> bytes:
        if self.closed:
            raise EndOfStream(str(self.endpoint))
        data = self._read(max_bytes)
        self.stats.bytes_in += len(data)
        return data

    def wait_readable(self, timeout: float) -> bool:
        raise NotImplementedError

    def close(self):
        self.closed = True

    def _write(self, data: bytes) -> int:
        raise NotImplementedError

    def _read(self, max_bytes: int) -> bytes:
        raise NotImplementedError

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __repr__(self):
        return f"<{type(self).__name__} {self.endpoint}>"


class _SocketStream(Connection):
    """Shared logic for connected TCP sockets."""

    sock: Optional[socket.socket] = None

    def _write(self, data: bytes) -> int:
        sock = self._require_sock()
        view = memoryview(data)
        sent = 0
        while sent < len(view):
            try:
                n = sock.send(view[sent:])
            except BlockingIOError:
                select.select([], [sock], [], 1.0)
                continue
            except OSError as exc:
                raise WriteFailure(f"{self.endpoint}: {exc}") from exc
            if n == 0:
                raise WriteFailure(f"{self.endpoint}: connection broken")
            sent += n
        return sent

    def _read(self, max_bytes: int) -> bytes:
        sock = self.sock
        if sock is None:
            return b""
        try:
            data = sock.recv(max_bytes)
        except (BlockingIOError, InterruptedError):
            return b""
        except OSError as exc:
            self._peer_gone()
            raise EndOfStream(f"{self.endpoint}: {exc}") from exc
        if not data:
            self._peer_gone()
            raise EndOfStream(str(self.endpoint))
        return data

    def _peer_gone(self):
        self.close()

    def _require_sock(self) -> socket.socket:
        if self.sock is None:
            raise WriteFailure(f"{self.endpoint}: not connected")
        return self.sock

    def wait_readable(self, timeout: float) -> bool:
        sock = self.sock
        if sock is None or self.closed:
            time.sleep(timeout)
            return False
        try:
            r, _, _ = select.select([sock], [], [], timeout)
        except (OSError, ValueError):
            return True  # closed underneath us; the next read reports it
        return bool(r)

    def close(self):
        if self.closed:
            return
        self.closed = True
        sock, self.sock = self.sock, None
        if sock is not None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()


def _tune(sock: socket.socket):
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    sock.setblocking(False)


class TcpClient(_SocketStream):
    def __init__(self, endpoint: Endpoint, retry_delays=RETRY_DELAYS):
        super().__init__(endpoint)
        last = None
        for delay in (0.0, *retry_delays):
            if delay:
                time.sleep(delay)
            try:
                sock = socket.create_connection((endpoint.host, endpoint.port), timeout=2.0)
            except OSError as exc:
                last = exc
                continue
            _tune(sock)
            self.sock = sock
            return
        raise OpenFailure(endpoint, last)


class TcpServer(_SocketStream):
    """Listens on bind:port and serves one peer at a time.

    ``port`` 0 picks a free port; the bound one is in :attr:`address`.
    When the peer disconnects, the server returns to accepting.
    """

    def __init__(self, endpoint: Endpoint, accept_timeout: float = 10.0):
        super().__init__(endpoint)
        self.accept_timeout = accept_timeout
        self._connected = threading.Event()
        try:
            lsock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            lsock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            lsock.bind((endpoint.host or "0.0.0.0", endpoint.port))
            lsock.listen(1)
        except OSError as exc:
            raise OpenFailure(endpoint, exc) from exc
        lsock.setblocking(False)
        self.listener = lsock
        self.address = lsock.getsockname()

    @property
    def port(self) -> int:
        return self.address[1]

    @property
    def connected(self) -> bool:
        return self.sock is not None

    def accept(self, timeout: Optional[float] = None) -> bool:
        if self.sock is not None:
            return True
        lsock = self.listener
        if lsock is None:
            return False
        try:
            r, _, _ = select.select([lsock], [], [], timeout)
        except (OSError, ValueError):
            return False
        if not r:
            return False
        try:
            sock, _ = lsock.accept()
        except (BlockingIOError, OSError):
            return False
        _tune(sock)
        self.sock = sock
        self._connected.set()
        return True

    def wait_connected(self, timeout: float) -> bool:
        return self._connected.wait(timeout)

    def wait_readable(self, timeout: float) -> bool:
        if self.closed:
            time.sleep(timeout)
            return False
        if self.sock is None:
            self.accept(timeout)
            return self.sock is not None
        return super().wait_readable(timeout)

    def _write(self, data: bytes) -> int:
        if self.sock is None and not self._connected.wait(self.accept_timeout):
            raise WriteFailure(f"{self.endpoint}: no peer connected")
        return super()._write(data)

    def _peer_gone(self):
        # drop the peer but keep listening for the next one
        sock, self.sock = self.sock, None
        self._connected.clear()
        if sock is not None:
            sock.close()

    def _read(self, max_bytes: int) -> bytes:
        if self.sock is None:
            return b""
        try:
            return super()._read(max_bytes)
        except EndOfStream:
            if self.closed:
                raise
            return b""

    def close(self):
        if self.closed:
            return
        super().close()
        lsock, self.listener = self.listener, None
        if lsock is not None:
            lsock.close()


class UdpConnection(Connection):
    """One datagram per write; each read returns at most one datagram."""

    message_oriented = True
    MAX_DATAGRAM = 65507

    def __init__(self, endpoint: Endpoint):
        super().__init__(endpoint)
        try:
            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 4 << 20)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, 4 << 20)
            sock.bind((endpoint.bind_host or "0.0.0.0", endpoint.bind_port))
        except OSError as exc:
            raise OpenFailure(endpoint, exc) from exc
        sock.setblocking(False)
        self.sock = sock
        self.address = sock.getsockname()
        self.peer = (endpoint.host, endpoint.port)

    def _write(self, data: bytes) -> int:
        if len(data) > self.MAX_DATAGRAM:
            raise WriteFailure(f"datagram of {len(data)} bytes exceeds {self.MAX_DATAGRAM}")
        while True:
            try:
                return self.sock.sendto(data, self.peer)
            except BlockingIOError:
                select.select([], [self.sock], [], 1.0)
            except OSError as exc:
                raise WriteFailure(f"{self.endpoint}: {exc}") from exc

    def _read(self, max_bytes: int) -> bytes:
        try:
            data, _ = self.sock.recvfrom(max(max_bytes, 1))
        except (BlockingIOError, InterruptedError):
            return b""
        except OSError as exc:
            if exc.errno == errno.ECONNREFUSED:
                return b""  # ICMP for an earlier datagram; not our concern
            raise EndOfStream(f"{self.endpoint}: {exc}") from exc
        return data

    def wait_readable(self, timeout: float) -> bool:
        if self.closed:
            time.sleep(timeout)
            return False
        try:
            r, _, _ = select.select([self.sock], [], [], timeout)
        except (OSError, ValueError):
            return True
        return bool(r)

    def close(self):
        if self.closed:
            return
        self.closed = True
        self.sock.close()


_BAUD_CONSTANTS = {}


def _baud_constant(baud: int):
    import termios

    if not _BAUD_CONSTANTS:
        for name in dir(termios):
            if name.startswith("B") and name[1:].isdigit():
                _BAUD_CONSTANTS[int(name[1:])] = getattr(termios, name)
    if baud not in _BAUD_CONSTANTS:
        raise ValueError(f"unsupported baud rate {baud}")
    return _BAUD_CONSTANTS[baud]


class SerialConnection(Connection):
    """Raw-mode serial line over a tty device (including pty slaves)."""

    def __init__(self, endpoint: Endpoint, fd: Optional[int] = None):
        super().__init__(endpoint)
        import termios
        import tty

        if fd is None:
            try:
                fd = os.open(endpoint.path, os.O_RDWR | os.O_NOCTTY | os.O_NONBLOCK)
            except OSError as exc:
                raise OpenFailure(endpoint, exc) from exc
        else:
            os.set_blocking(fd, False)
        self.fd = fd
        if os.isatty(fd):
            tty.setraw(fd)
            attrs = termios.tcgetattr(fd)
            speed = _baud_constant(endpoint.baud)
            attrs[4] = attrs[5] = speed
            termios.tcsetattr(fd, termios.TCSANOW, attrs)

    def _write(self, data: bytes) -> int:
        view = memoryview(data)
        sent = 0
        while sent < len(view):
            try:
                sent += os.write(self.fd, view[sent:])
            except BlockingIOError:
                select.select([], [self.fd], [], 1.0)
            except OSError as exc:
                raise WriteFailure(f"{self.endpoint}: {exc}") from exc
        return sent

    def _read(self, max_bytes: int) -> bytes:
        try:
            data = os.read(self.fd, max_bytes)
        except (BlockingIOError, InterruptedError):
            return b""
        except OSError as exc:
            # EIO on a pty master/slave whose other side has gone away
            self.close()
            raise EndOfStream(f"{self.endpoint}: {exc}") from exc
        if not data:
            self.close()
            raise EndOfStream(str(self.endpoint))
        return data

    def wait_readable(self, timeout: float) -> bool:
        if self.closed:
            time.sleep(timeout)
            return False
        try:
            r, _, _ = select.select([self.fd], [], [], timeout)
        except (OSError, ValueError):
            return True
        return bool(r)

    def close(self):
        if self.closed:
            return
        self.closed = True
        try:
            os.close(self.fd)
        except OSError:
            pass


def open_pty_pair(baud: int = 115200):
    """Return ``(master, slave)`` serial connections over a fresh pty."""
    master_fd, slave_fd = os.openpty()
    slave_path = os.ttyname(slave_fd)
    master = SerialConnection(Endpoint("serial", path=f"pty-master:{slave_path}", baud=baud), fd=master_fd)
    slave = SerialConnection(Endpoint("serial", path=slave_path, baud=baud), fd=slave_fd)
    return master, slave


class _PipeEnd:
    def __init__(self):
        self.buf = bytearray()
        self.closed = False


class _PipeChannel:
    def __init__(self, name):
        self.name = name
        self.cond = threading.Condition()
        self.ends = (_PipeEnd(), _PipeEnd())  # data flowing *into* side 0 / side 1
        self.opened = 0


_pipes: dict[str, _PipeChannel] = {}
_pipes_lock = threading.Lock()


class PipeConnection(Connection):
    """In-process duplex byte pipe registered under a name."""

    def __init__(self, endpoint: Endpoint):
        super().__init__(endpoint)
        with _pipes_lock:
            chan = _pipes.get(endpoint.path)
            if chan is None or chan.opened >= 2:
                chan = _PipeChannel(endpoint.path)
                _pipes[endpoint.path] = chan
            self.side = chan.opened
            chan.opened += 1
        self._chan = chan
        self._inbox = chan.ends[self.side]
        self._outbox = chan.ends[1 - self.side]

    def _write(self, data: bytes) -> int:
        with self._chan.cond:
            if self._outbox.closed:
                raise WriteFailure(f"{self.endpoint}: peer closed")
            self._outbox.buf += data
            self._chan.cond.notify_all()
        return len(data)

    def _read(self, max_bytes: int) -> bytes:
        with self._chan.cond:
            buf = self._inbox.buf
            if not buf:
                if self._outbox.closed:
                    raise EndOfStream(f"{self.endpoint}: peer closed")
                return b""
            data = bytes(buf[:max_bytes])
            del buf[:max_bytes]
            return data

    def wait_readable(self, timeout: float) -> bool:
        with self._chan.cond:
            if self._inbox.buf or self._outbox.closed or self.closed:
                return True
            self._chan.cond.wait(timeout)
            return bool(self._inbox.buf) or self._outbox.closed

    def close(self):
        if self.closed:
            return
        self.closed = True
        with self._chan.cond:
            self._inbox.closed = True
            self._inbox.buf.clear()
            self._chan.cond.notify_all()
        with _pipes_lock:
            if self._chan.ends[0].closed and self._chan.ends[1].closed:
                if _pipes.get(self._chan.name) is self._chan:
                    del _pipes[self._chan.name]


def open(ep, **kwargs) -> Connection:  # noqa: A001 - mirrors the transport verb
    """Open a connection for an :class:`Endpoint` or endpoint string."""
    if isinstance(ep, str):
        ep = Endpoint.parse(ep)
    if ep.kind == "tcp-client":
        return TcpClient(ep, **kwargs)
    if ep.kind == "tcp-server":
        return TcpServer(ep, **kwargs)
    if ep.kind == "udp":
        return UdpConnection(ep)
    if ep.kind == "serial":
        return SerialConnection(ep)
    return PipeConnection(ep)


def write_bytes(h: Connection, data: bytes) -> int:
    return h.write_bytes(data)


def read_available(h: Connection, max_bytes: int = 65536) -> bytes:
    return h.read_available(max_bytes)


def close(h: Connection):
    h.close()
