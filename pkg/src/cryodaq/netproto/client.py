"""Blocking client for the channel-access-style protocol."""

from __future__ import annotations

import logging
import queue
import socket
import threading
from typing import Callable

from cryodaq.errors import ConnectionClosed, NotFound, ProtocolError, ReadOnly, Timeout
from cryodaq.netproto import codec
from cryodaq.netproto.codec import WireValue

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 5.0

# A sink receives each EVENT value; None marks end of stream.
Sink = Callable[[WireValue | None], None]

_ERRORS = {codec.ERR_NOT_FOUND: NotFound, codec.ERR_READ_ONLY: ReadOnly,
           codec.ERR_MALFORMED: ProtocolError}


def parse_endpoint(text: str, default_port: int = 5064) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    return host or "127.0.0.1", int(port)


class Subscription:
    def __init__(self, client: Client, name: str, sink: Sink):
        self.client = client
        self.name = name
        self.sink = sink
        self.active = True

    def unsubscribe(self) -> None:
        if self.active:
            self.client._unsubscribe(self)


class Client:
    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT, ident: str = "cryodaq-client"):
        self.timeout = timeout
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectionClosed(f"cannot connect to {host}:{port}: {exc}") from exc
        self.sock.settimeout(None)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._replies: queue.Queue = queue.Queue()
        self._request_lock = threading.Lock()
        self._subs: dict[str, list[Subscription]] = {}
        self._subs_lock = threading.Lock()
        self._closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, name="ca-client-read", daemon=True)
        self._reader.start()
        self.server_version, self.server_ident = self._request(
            codec.HELLO, (codec.PROTOCOL_VERSION, ident), expect=codec.HELLO)

    @classmethod
    def connect(cls, endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> Client:
        return cls(*parse_endpoint(endpoint), timeout=timeout)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def closed(self) -> bool:
        return self._closed.is_set()

    def _read_loop(self) -> None:
        reader = codec.FrameReader()
        try:
            while True:
                data = self.sock.recv(65536)
                if not data:
                    break
                for opcode, payload in reader.feed(data):
                    if opcode == codec.EVENT:
                        self._dispatch(codec.decode_value(payload))
                    else:
                        self._replies.put((opcode, payload))
        except (OSError, ProtocolError) as exc:
            log.debug("client reader stopped: %s", exc)
        self._shutdown()

    def _dispatch(self, value: WireValue) -> None:
        with self._subs_lock:
            subs = list(self._subs.get(value.name, ()))
        for sub in subs:
            sub.sink(value)

    def _shutdown(self) -> None:
        if self._closed.is_set():
            return
        self._closed.set()
        self._replies.put(None)
        with self._subs_lock:
            subs = [s for lst in self._subs.values() for s in lst]
            self._subs.clear()
        for sub in subs:
            sub.active = False
            sub.sink(None)

    def _request(self, opcode: int, body, expect: int = codec.VALUE):
        with self._request_lock:
            if self._closed.is_set():
                raise ConnectionClosed("connection closed")
            try:
                self.sock.sendall(codec.encode_message(opcode, body))
            except OSError as exc:
                self._shutdown()
                raise ConnectionClosed(str(exc)) from exc
            try:
                reply = self._replies.get(timeout=self.timeout)
            except queue.Empty:
                self.close()
                raise Timeout(f"no reply within {self.timeout} s") from None
            if reply is None:
                raise ConnectionClosed("connection closed by server")
            r_op, payload = reply
            if r_op == codec.ERROR:
                code, msg = codec.decode_error(payload)
                raise _ERRORS.get(code, ProtocolError)(msg)
            if r_op != expect:
                raise ProtocolError(f"expected {codec.OPCODES[expect]}, got {codec.OPCODES[r_op]}")
            return codec.decode_body(r_op, payload)

    def get(self, name: str) -> WireValue:
        return self._request(codec.GET, name)

    def put(self, name: str, time_index: float, raw: float, calibrated: float) -> WireValue:
        return self._request(codec.PUT, WireValue(name, time_index, raw, calibrated))

    def subscribe(self, name: str, sink: Sink) -> Subscription:
        sub = Subscription(self, name, sink)
        with self._subs_lock:
            self._subs.setdefault(name, []).append(sub)
        try:
            self._request(codec.SUBSCRIBE, name)
        except Exception:
            with self._subs_lock:
                self._subs[name].remove(sub)
            raise
        return sub

    def _unsubscribe(self, sub: Subscription) -> None:
        with self._subs_lock:
            others = [s for s in self._subs.get(sub.name, []) if s is not sub]
        if not others and not self.closed:
            self._request(codec.UNSUBSCRIBE, sub.name)
        with self._subs_lock:
            if sub in self._subs.get(sub.name, []):
                self._subs[sub.name].remove(sub)
        sub.active = False

    def send_raw(self, data: bytes) -> None:
        """Write raw bytes (diagnostics and protocol tests)."""
        self.sock.sendall(data)

    def next_reply(self, timeout: float | None = None):
        try:
            return self._replies.get(timeout=self.timeout if timeout is None else timeout)
        except queue.Empty:
            raise Timeout("no reply") from None

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self._reader.join(timeout=2)
        self._shutdown()
