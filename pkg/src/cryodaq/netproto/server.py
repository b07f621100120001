"""Threaded TCP server exposing a :class:`LiveTable`.

Each connection gets a reader thread (requests) and a writer thread that
drains a bounded outbound queue.  When a slow client's queue is full the
oldest ordinary monitor event is dropped and counted; replies and quench
trigger events are never dropped.
"""

from __future__ import annotations

import collections
import itertools
import logging
import socket
import threading
import time

from cryodaq.errors import NotFound, ProtocolError, ReadOnly
from cryodaq.netproto import codec
from cryodaq.netproto.codec import WireValue
from cryodaq.netproto.live import LiveTable
from cryodaq.registry import Sample

log = logging.getLogger(__name__)

STATS_CHANNEL = "SERVER.STATS"
DEFAULT_CLIENT_QUEUE = 1024

_CLOSE = object()


class OutboundQueue:
    """Bounded frame queue with a drop-oldest policy for droppable frames."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.drops = 0
        self._items: collections.deque = collections.deque()
        self._cond = threading.Condition()

    def put(self, frame, droppable: bool = False) -> bool:
        """Queue ``frame``; returns False if an older event was dropped."""
        dropped = False
        with self._cond:
            if len(self._items) >= self.capacity:
                for i, (_, can_drop) in enumerate(self._items):
                    if can_drop:
                        del self._items[i]
                        self.drops += 1
                        dropped = True
                        break
                else:
                    if droppable:
                        # queue is full of protected frames; the new event is the oldest droppable
                        self.drops += 1
                        return False
            self._items.append((frame, droppable))
            self._cond.notify()
        return not dropped

    def get(self):
        with self._cond:
            while not self._items:
                self._cond.wait()
            return self._items.popleft()[0]

    def __len__(self) -> int:
        return len(self._items)


class ClientSession:
    _ids = itertools.count()

    def __init__(self, server: ChannelAccessServer, sock: socket.socket, addr):
        self.id = next(self._ids)
        self.server = server
        self.sock = sock
        self.addr = addr
        self.subscriptions: set[str] = set()
        self.outbound = OutboundQueue(server.client_queue_capacity)
        self.greeted = False
        self.closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, name=f"ca-read-{self.id}", daemon=True)
        self._writer = threading.Thread(target=self._write_loop, name=f"ca-write-{self.id}", daemon=True)

    def start(self) -> None:
        self._reader.start()
        self._writer.start()

    def send(self, opcode: int, body, droppable: bool = False) -> None:
        self.outbound.put(codec.encode_message(opcode, body), droppable)

    def send_frame(self, frame: bytes, droppable: bool) -> None:
        self.outbound.put(frame, droppable)

    def close(self) -> None:
        if self.closed.is_set():
            return
        self.closed.set()
        self.server._forget(self)
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self.outbound.put(_CLOSE)

    def _write_loop(self) -> None:
        while True:
            frame = self.outbound.get()
            if frame is _CLOSE:
                break
            try:
                self.sock.sendall(frame)
            except OSError:
                break
        self.close()

    def _read_loop(self) -> None:
        reader = codec.FrameReader()
        try:
            while not self.closed.is_set():
                data = self.sock.recv(65536)
                if not data:
                    break
                for opcode, payload in reader.feed(data):
                    self._handle(opcode, payload)
        except ProtocolError as exc:
            log.info("client %s: malformed frame: %s", self.addr, exc)
            self.send(codec.ERROR, (codec.ERR_MALFORMED, str(exc)))
            self.outbound.put(_CLOSE)
            return
        except OSError:
            pass
        self.close()

    def _value(self, name: str) -> WireValue:
        if name == STATS_CHANNEL:
            return WireValue(name, *self.server.stats())
        return WireValue(name, *self.server.live.read(name))

    def _handle(self, opcode: int, payload: bytes) -> None:
        if opcode == codec.HELLO:
            codec.decode_hello(payload)
            self.greeted = True
            self.send(codec.HELLO, (codec.PROTOCOL_VERSION, "cryodaq"))
            return
        if not self.greeted:
            raise ProtocolError("HELLO required before requests")
        try:
            if opcode == codec.GET:
                self.send(codec.VALUE, self._value(codec.decode_name(payload)))
            elif opcode == codec.PUT:
                v = codec.decode_value(payload)
                stored = self.server.live.put(v.name, Sample(*v.triple))
                self.send(codec.VALUE, WireValue(v.name, *stored))
            elif opcode == codec.SUBSCRIBE:
                name = codec.decode_name(payload)
                value = self._value(name)
                self.server._subscribe(self, name)
                self.send(codec.VALUE, value)
            elif opcode == codec.UNSUBSCRIBE:
                name = codec.decode_name(payload)
                value = self._value(name)
                self.server._unsubscribe(self, name)
                self.send(codec.VALUE, value)
            else:
                raise ProtocolError(f"{codec.OPCODES[opcode]} is not a request")
        except NotFound as exc:
            self.send(codec.ERROR, (codec.ERR_NOT_FOUND, str(exc)))
        except ReadOnly as exc:
            self.send(codec.ERROR, (codec.ERR_READ_ONLY, str(exc)))


class ChannelAccessServer:
    """Serve ``live`` on ``host:port``; ``port=0`` picks a free port."""

    def __init__(self, live: LiveTable, host: str = "127.0.0.1", port: int = 0,
                 client_queue_capacity: int = DEFAULT_CLIENT_QUEUE):
        self.live = live
        self.host = host
        self.port = port
        self.client_queue_capacity = client_queue_capacity
        self._sock: socket.socket | None = None
        self._clients: set[ClientSession] = set()
        self._subs: dict[str, set[ClientSession]] = collections.defaultdict(set)
        self._lock = threading.Lock()
        self._accept_thread: threading.Thread | None = None
        self._t0 = time.monotonic()
        self._closed_drops = 0
        self._stopping = threading.Event()

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()[:2]

    def start(self) -> ChannelAccessServer:
        """Bind and start accepting.  Raises OSError if the endpoint is unbindable."""
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((self.host, self.port))
            sock.listen(64)
        except OSError:
            sock.close()
            raise
        self._sock = sock
        self.live.add_listener(self._on_publish)
        self._accept_thread = threading.Thread(target=self._accept_loop, name="ca-accept", daemon=True)
        self._accept_thread.start()
        log.info("channel access server on %s:%d", *self.address)
        return self

    def __enter__(self):
        return self.start() if self._sock is None else self

    def __exit__(self, *exc):
        self.close()

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, addr = self._sock.accept()
            except OSError:
                break
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            session = ClientSession(self, conn, addr)
            with self._lock:
                self._clients.add(session)
            session.start()

    def _forget(self, session: ClientSession) -> None:
        with self._lock:
            if session in self._clients:
                self._clients.discard(session)
                self._closed_drops += session.outbound.drops
            for name in session.subscriptions:
                self._subs[name].discard(session)

    def _subscribe(self, session: ClientSession, name: str) -> None:
        with self._lock:
            session.subscriptions.add(name)
            self._subs[name].add(session)

    def _unsubscribe(self, session: ClientSession, name: str) -> None:
        with self._lock:
            session.subscriptions.discard(name)
            self._subs[name].discard(session)

    def _on_publish(self, name: str, sample: Sample, urgent: bool) -> None:
        with self._lock:
            targets = list(self._subs.get(name, ()))
        if not targets:
            return
        frame = codec.encode_message(codec.EVENT, WireValue(name, *sample))
        for session in targets:
            session.send_frame(frame, droppable=not urgent)

    @property
    def drops(self) -> int:
        with self._lock:
            return self._closed_drops + sum(c.outbound.drops for c in self._clients)

    @property
    def client_count(self) -> int:
        with self._lock:
            return len(self._clients)

    def stats(self) -> tuple[float, float, float]:
        """(uptime s, dropped monitor events, connected clients)."""
        return (time.monotonic() - self._t0, float(self.drops), float(self.client_count))

    def close(self) -> None:
        self._stopping.set()
        self.live.remove_listener(self._on_publish)
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2)
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            c.close()
