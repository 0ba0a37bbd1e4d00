import socket
import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

from uwstack import connectors
from uwstack.connectors import (EndOfStream, Endpoint, OpenFailure, TcpServer, WriteFailure,
                                open_pty_pair)

from conftest import wait_until


def _closed_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def _free_udp_port():
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def read_exactly(conn, n, timeout=3.0):
    out = bytearray()
    deadline = time.monotonic() + timeout
    while len(out) < n and time.monotonic() < deadline:
        if conn.wait_readable(0.05):
            out += conn.read_available(n - len(out))
    return bytes(out)


@pytest.fixture
def tcp_pair():
    server = connectors.open("tcps://127.0.0.1:0")
    client = connectors.open(f"tcp://127.0.0.1:{server.port}")
    assert server.accept(2)
    yield server, client
    client.close()
    server.close()


@pytest.fixture
def pty_pair():
    master, slave = open_pty_pair(115200)
    yield master, slave
    master.close()
    slave.close()


@pytest.fixture
def udp_pair():
    pa, pb = _free_udp_port(), _free_udp_port()
    a = connectors.open(f"udp://127.0.0.1:{pb}?bind={pa}")
    b = connectors.open(f"udp://127.0.0.1:{pa}?bind={pb}")
    yield a, b
    a.close()
    b.close()


# -- endpoint grammar -------------------------------------------------------

@pytest.mark.parametrize("text,kind", [
    ("tcp://127.0.0.1:9200", "tcp-client"),
    ("tcps://0.0.0.0:9200", "tcp-server"),
    ("udp://127.0.0.1:9300", "udp"),
    ("serial:///dev/ttyUSB0?baud=115200", "serial"),
    ("pipe://a1", "pipe"),
])
def test_endpoint_grammar(text, kind):
    ep = Endpoint.parse(text)
    assert ep.kind == kind
    assert Endpoint.parse(str(ep)) == ep


@pytest.mark.parametrize("text", ["tcp://host:0", "tcp://host:70000", "serial:///dev/x?baud=0",
                                  "ftp://x:1", "udp://host:99999"])
def test_endpoint_rejects_bad_values(text):
    with pytest.raises(ValueError):
        Endpoint.parse(text)


def test_serial_endpoint_keeps_path_and_baud():
    ep = Endpoint.parse("serial:///dev/pts/4?baud=9600")
    assert (ep.path, ep.baud) == ("/dev/pts/4", 9600)


# -- open -------------------------------------------------------------------

def test_tcp_client_connects_to_listener(tcp_pair):
    server, client = tcp_pair
    assert server.connected


def test_tcp_client_gives_up_after_retry_schedule():
    port = _closed_port()
    t0 = time.monotonic()
    with pytest.raises(OpenFailure) as info:
        connectors.open(f"tcp://127.0.0.1:{port}")
    elapsed = time.monotonic() - t0
    assert 1.7 <= elapsed <= 2.2
    assert str(port) in str(info.value)


def test_missing_serial_device_is_open_failure():
    with pytest.raises(OpenFailure):
        connectors.open("serial:///dev/does-not-exist?baud=115200")


def test_pty_pair_loopback(pty_pair):
    master, slave = pty_pair
    assert master.write_bytes(b"\x00\x10\x03\r\nabc") == 8
    assert read_exactly(slave, 8) == b"\x00\x10\x03\r\nabc"


# -- write / read -----------------------------------------------------------

def test_write_counts_and_empty_write(tcp_pair):
    server, client = tcp_pair
    assert client.write_bytes(b"hello") == 5
    assert client.write_bytes(b"") == 0
    assert read_exactly(server, 5) == b"hello"
    assert client.stats.bytes_out == 5
    time.sleep(0.05)
    assert server.read_available(64) == b""


def test_read_without_data_is_empty_not_eof(tcp_pair):
    server, client = tcp_pair
    assert client.read_available(64) == b""


def test_read_respects_max_and_order(tcp_pair):
    server, client = tcp_pair
    data = bytes(range(100))
    client.write_bytes(data)
    assert wait_until(lambda: server.wait_readable(0.01), 1)
    time.sleep(0.05)
    assert server.read_available(64) == data[:64]
    assert read_exactly(server, 36) == data[64:]


def test_udp_write_is_one_datagram(udp_pair):
    a, b = udp_pair
    assert a.write_bytes(b"x" * 1472) == 1472
    assert b.wait_readable(1)
    assert b.read_available(65536) == b"x" * 1472


def test_udp_keeps_message_boundaries(udp_pair):
    a, b = udp_pair
    a.write_bytes(b"first")
    a.write_bytes(b"second")
    got = []
    while len(got) < 2 and b.wait_readable(1):
        got.append(b.read_available(65536))
    assert got == [b"first", b"second"]


def test_tcp_does_not_keep_message_boundaries(tcp_pair):
    server, client = tcp_pair
    client.write_bytes(b"first")
    client.write_bytes(b"second")
    time.sleep(0.1)
    assert server.read_available(65536) == b"firstsecond"


def test_pipe_is_duplex(pipe_name):
    a = connectors.open(f"pipe://{pipe_name}")
    b = connectors.open(f"pipe://{pipe_name}")
    a.write_bytes(b"ping")
    b.write_bytes(b"pong")
    assert read_exactly(b, 4) == b"ping"
    assert read_exactly(a, 4) == b"pong"
    a.close()
    b.close()


# -- close ------------------------------------------------------------------

def test_close_then_write_fails_and_close_is_idempotent(tcp_pair):
    server, client = tcp_pair
    client.close()
    client.close()
    with pytest.raises(WriteFailure):
        client.write_bytes(b"x")
    with pytest.raises(EndOfStream):
        client.read_available(10)


def test_close_with_unread_peer_data(tcp_pair):
    server, client = tcp_pair
    client.write_bytes(b"unread" * 100)
    time.sleep(0.05)
    server.close()


def test_peer_close_on_pipe_reads_end_of_stream(pipe_name):
    a = connectors.open(f"pipe://{pipe_name}")
    b = connectors.open(f"pipe://{pipe_name}")
    a.close()
    with pytest.raises(EndOfStream):
        b.read_available(10)
    with pytest.raises(WriteFailure):
        b.write_bytes(b"x")
    b.close()


def test_tcp_server_accepts_next_peer_after_disconnect():
    server = connectors.open("tcps://127.0.0.1:0")
    try:
        c1 = connectors.open(f"tcp://127.0.0.1:{server.port}")
        assert server.accept(2)
        c1.close()
        assert wait_until(lambda: (server.wait_readable(0.01), server.read_available(10))
                          and not server.connected, 2)
        c2 = connectors.open(f"tcp://127.0.0.1:{server.port}")
        c2.write_bytes(b"again")
        assert read_exactly(server, 5) == b"again"
        c2.close()
    finally:
        server.close()


# -- byte-stream identity ---------------------------------------------------

def _stream_identity(writer, reader, chunks):
    expected = b"".join(chunks)
    got = bytearray()

    def pump():
        got.extend(read_exactly(reader, len(expected), timeout=5))

    t = threading.Thread(target=pump)
    t.start()
    for c in chunks:
        writer.write_bytes(c)
    t.join()
    return bytes(got) == expected


chunk_lists = st.lists(st.binary(min_size=0, max_size=700), min_size=1, max_size=20)


@settings(max_examples=30, deadline=None)
@given(chunks=chunk_lists)
def test_byte_stream_identity_tcp(chunks):
    server = TcpServer(Endpoint("tcp-server", host="127.0.0.1", port=0))
    client = connectors.open(f"tcp://127.0.0.1:{server.port}")
    try:
        assert server.accept(2)
        assert _stream_identity(client, server, chunks)
    finally:
        client.close()
        server.close()


@settings(max_examples=30, deadline=None)
@given(chunks=chunk_lists)
def test_byte_stream_identity_serial(chunks):
    master, slave = open_pty_pair(115200)
    try:
        assert _stream_identity(master, slave, chunks)
    finally:
        master.close()
        slave.close()
