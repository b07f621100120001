import math
import queue
import socket
import struct
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cryodaq.errors import ConnectionClosed, NotFound, ProtocolError, ReadOnly
from cryodaq.netproto import STATS_CHANNEL, ChannelAccessServer, Client, LiveTable, WireValue, serve
from cryodaq.netproto import codec
from cryodaq.netproto.server import OutboundQueue
from cryodaq.registry import Sample


@pytest.fixture
def live():
    table = LiveTable()
    table.declare("TS01.TEMP", initial=Sample(0.0, 1.5, 150.0))
    table.declare("PS01.ISET", writable=True, initial=Sample(0.0, 0.0, 0.0))
    table.declare("MAGNET.QUENCH_TRIG")
    return table


@pytest.fixture
def server(live):
    srv = serve(live)
    yield srv
    srv.close()


@pytest.fixture
def client(server):
    c = Client(*server.address)
    yield c
    c.close()


def read_frame(sock):
    buf = b""
    while len(buf) < 4:
        buf += sock.recv(4 - len(buf))
    (n,) = struct.unpack("<I", buf)
    body = b""
    while len(body) < n:
        chunk = sock.recv(n - len(body))
        if not chunk:
            raise EOFError
        body += chunk
    return body[0], body[1:]


def test_get_frame_bytes():
    frame = codec.encode_message(codec.GET, "TS01.TEMP")
    assert frame == bytes.fromhex("0c000000" "02" "0900") + b"TS01.TEMP"


def test_value_frame_layout():
    frame = codec.encode_message(codec.VALUE, WireValue("A.B", 1.0, 2.0, 2.0))
    assert frame[:5] == struct.pack("<IB", 1 + 2 + 3 + 24, 8)
    assert frame[-24:].hex().upper() == "000000000000F03F" "0000000000000040" "0000000000000040"


names = st.text(st.characters(min_codepoint=33, max_codepoint=126), min_size=1, max_size=40)
floats = st.floats(allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(names, floats, floats, floats, st.integers(0, 65535), st.integers(1, 3))
def test_codec_round_trips_every_opcode(name, a, b, c, version, code):
    v = WireValue(name, a, b, c)
    bodies = {codec.HELLO: (version, name), codec.GET: name, codec.PUT: v, codec.SUBSCRIBE: name,
              codec.EVENT: v, codec.UNSUBSCRIBE: name, codec.ERROR: (code, name), codec.VALUE: v}
    stream = b"".join(codec.encode_message(op, body) for op, body in bodies.items())
    reader = codec.FrameReader()
    got = []
    for i in range(0, len(stream), 7):  # arbitrary fragmentation
        got += reader.feed(stream[i:i + 7])
    assert [op for op, _ in got] == list(bodies)
    for op, payload in got:
        assert tuple(codec.decode_body(op, payload)) == tuple(bodies[op])


def test_codec_nan_survives():
    v = codec.decode_value(codec.encode_value(WireValue("X.Y", math.nan, math.inf, -0.0)))
    assert math.isnan(v.time_index) and v.raw == math.inf and math.copysign(1, v.calibrated) < 0


@pytest.mark.parametrize("data", [struct.pack("<IB", 0, 2), struct.pack("<IB", 70000, 2),
                                  struct.pack("<IB", 1, 0x42)])
def test_decoder_rejects_bad_frames(data):
    with pytest.raises(ProtocolError):
        codec.FrameReader().feed(data)


def test_decode_rejects_trailing_bytes():
    with pytest.raises(ProtocolError):
        codec.decode_name(codec.encode_str("A.B") + b"x")
    with pytest.raises(ProtocolError):
        codec.decode_value(codec.encode_str("A.B") + b"\0" * 23)


def test_get_matches_live_table(live, client):
    assert client.get("TS01.TEMP") == WireValue("TS01.TEMP", 0.0, 1.5, 150.0)
    rng = np.random.default_rng(0)
    for i in range(500):
        s = Sample(float(i), *rng.normal(size=2).tolist())
        live.publish("TS01.TEMP", s)
        assert client.get("TS01.TEMP").triple == tuple(live.read("TS01.TEMP"))


def test_get_unknown_channel(client):
    with pytest.raises(NotFound):
        client.get("NOPE.NADA")
    assert client.get("TS01.TEMP").raw == 1.5  # connection survives


def test_put_setpoint_and_read_only(live, client):
    assert client.put("PS01.ISET", 1.0, 42.0, 42.0).raw == 42.0
    assert live.read("PS01.ISET") == Sample(1.0, 42.0, 42.0)
    with pytest.raises(ReadOnly):
        client.put("TS01.TEMP", 1.0, 0.0, 0.0)
    with pytest.raises(NotFound):
        client.put("NOPE.NADA", 1.0, 0.0, 0.0)


def test_subscription_fan_out_and_order(live, server):
    a, b = Client(*server.address), Client(*server.address)
    qa, qb = queue.Queue(), queue.Queue()
    try:
        a.subscribe("TS01.TEMP", qa.put)
        b.subscribe("TS01.TEMP", qb.put)
        for i in range(200):
            live.publish("TS01.TEMP", Sample(i * 0.01, float(i), float(i)))
        for q in (qa, qb):
            times = [q.get(timeout=5).time_index for _ in range(200)]
            assert times == [i * 0.01 for i in range(200)]
    finally:
        a.close()
        b.close()


def test_unsubscribe_stops_events(live, client):
    q = queue.Queue()
    sub = client.subscribe("TS01.TEMP", q.put)
    live.publish("TS01.TEMP", Sample(1.0, 1.0, 1.0))
    assert q.get(timeout=5).time_index == 1.0
    sub.unsubscribe()
    live.publish("TS01.TEMP", Sample(2.0, 2.0, 2.0))
    client.get("TS01.TEMP")  # round trip orders any stray event before this point
    assert q.empty()


def test_subscribe_unknown(client):
    with pytest.raises(NotFound):
        client.subscribe("NOPE.NADA", lambda v: None)


def test_server_close_ends_stream(live):
    srv = serve(live)
    c = Client(*srv.address)
    q = queue.Queue()
    c.subscribe("TS01.TEMP", q.put)
    srv.close()
    assert q.get(timeout=5) is None
    with pytest.raises(ConnectionClosed):
        c.get("TS01.TEMP")
    c.close()


def test_stats_channel(client, server):
    t, drops, clients = client.get(STATS_CHANNEL).triple
    assert t >= 0 and drops == 0 and clients == 1


def test_request_before_hello_is_malformed(server):
    s = socket.create_connection(server.address)
    try:
        s.sendall(codec.encode_message(codec.GET, "TS01.TEMP"))
        op, payload = read_frame(s)
        assert op == codec.ERROR and codec.decode_error(payload)[0] == codec.ERR_MALFORMED
        assert s.recv(10) == b""
    finally:
        s.close()


def test_malformed_frame_gets_error_then_close(client):
    client.send_raw(struct.pack("<IB", 3, 0x77) + b"xx")
    op, payload = client.next_reply()
    assert op == codec.ERROR and codec.decode_error(payload)[0] == codec.ERR_MALFORMED
    assert client.next_reply() is None


def test_bind_failure_raises(live, server):
    with pytest.raises(OSError):
        ChannelAccessServer(live, *server.address).start()


def test_outbound_queue_drops_oldest_event_only():
    q = OutboundQueue(3)
    q.put(b"reply", droppable=False)
    q.put(b"e1", droppable=True)
    q.put(b"e2", droppable=True)
    q.put(b"e3", droppable=True)
    q.put(b"trig", droppable=False)
    assert q.drops == 2
    assert [q.get() for _ in range(len(q))] == [b"reply", b"e3", b"trig"]


def test_slow_client_drops_events_but_not_triggers(live):
    srv = serve(live, client_queue_capacity=8)
    s = socket.create_connection(srv.address)
    s.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 4096)
    try:
        s.sendall(codec.encode_message(codec.HELLO, (1, "slow")))
        assert read_frame(s)[0] == codec.HELLO
        for name in ("TS01.TEMP", "MAGNET.QUENCH_TRIG"):
            s.sendall(codec.encode_message(codec.SUBSCRIBE, name))
            assert read_frame(s)[0] == codec.VALUE
        deadline = time.monotonic() + 30
        i = 0
        while srv.drops == 0 and time.monotonic() < deadline:
            live.publish("TS01.TEMP", Sample(float(i), 0.0, 0.0))
            i += 1
        assert srv.drops > 0
        live.publish("MAGNET.QUENCH_TRIG", Sample(0.5, 1.0, 1.0), urgent=True)
        for j in range(50):
            live.publish("TS01.TEMP", Sample(float(i + j), 0.0, 0.0))
        s.settimeout(10)
        seen_trig, times = False, []
        while not seen_trig:
            op, payload = read_frame(s)
            v = codec.decode_value(payload)
            if v.name == "MAGNET.QUENCH_TRIG":
                seen_trig = True
            else:
                times.append(v.time_index)
        assert times == sorted(set(times))
    finally:
        s.close()
        srv.close()
