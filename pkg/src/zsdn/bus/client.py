"""Client side of the bus protocol.

A ``BusSession`` owns one TCP connection to the broker, a reader thread that
dispatches inbound frames, and a heartbeat thread.  Events are consumed via
``next_event``; addressed requests block the calling thread until the
correlated reply arrives or the timeout fires.  Inbound requests are served
by an optional handler on a dedicated thread so a handler may itself use the
session without deadlocking the reader.
"""

from __future__ import annotations

import os
import queue
import socket
import threading
from dataclasses import dataclass

from zsdn.topic import SubscriptionPattern
from zsdn.bus import frames as fr
from zsdn.bus.frames import BusFrame, BusProtocolError, FrameType

DEFAULT_BUS_ADDR = "127.0.0.1:7633"
BUS_ADDR_ENV = "ZSDN_BUS_ADDR"
HEARTBEAT_INTERVAL = 2.0
DEFAULT_REQUEST_TIMEOUT = 5.0


class BusError(Exception):
    """Base class for session-level failures."""


class SessionClosed(BusError):
    """The broker connection is gone; the session cannot be used further."""


class RequestTimeout(BusError):
    pass


class RegistrationRefused(BusError):
    def __init__(self, status: int, instance_id: int):
        super().__init__(f"registration refused with status {status} for id {instance_id:#x}")
        self.status = status
        self.instance_id = instance_id


def default_bus_addr() -> str:
    return os.environ.get(BUS_ADDR_ENV, DEFAULT_BUS_ADDR)


def parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


@dataclass
class _PendingRequest:
    done: threading.Event
    status: int = 0
    payload: bytes = b""
    failed: bool = False


RequestHandler = "callable[[bytes], tuple[int, bytes]]"


class BusSession:
    """One connection to the broker; see the module docstring for threading."""

    def __init__(self, address: str | None = None, *,
                 heartbeat_interval: float = HEARTBEAT_INTERVAL,
                 on_request=None, on_disconnect=None, sink=None):
        self.address = address or default_bus_addr()
        self._heartbeat_interval = heartbeat_interval
        self.on_request = on_request
        self.on_disconnect = on_disconnect
        # When a sink is given, inbound traffic is funneled to it as
        # ("event", topic, payload) / ("request", reply_fn, payload) /
        # ("disconnect",) tuples instead of the internal queues, letting the
        # owner serialize everything on one loop.  Must not block.
        self.sink = sink
        self.instance_id: int | None = None
        self.controllet_type: int | None = None
        self._sock: socket.socket | None = None
        self._send_lock = threading.Lock()
        self._events: queue.Queue = queue.Queue()
        self._requests_in: queue.Queue = queue.Queue()
        self._pending: dict[int, _PendingRequest] = {}
        self._pending_lock = threading.Lock()
        self._next_req_id = 1
        self._ack: queue.Queue = queue.Queue(maxsize=1)
        self._closed = threading.Event()
        self._threads: list[threading.Thread] = []

    # -- lifecycle ----------------------------------------------------------

    def connect(self) -> BusSession:
        host, port = parse_addr(self.address)
        self._sock = socket.create_connection((host, port), timeout=10)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock.settimeout(None)
        self._spawn(self._read_loop, "bus-reader")
        return self

    def register(self, controllet_type: int, instance_id: int,
                 to_patterns=(), from_topics=()) -> None:
        body = fr.pack_register(controllet_type, instance_id, tuple(to_patterns), tuple(from_topics))
        self._send(BusFrame(FrameType.REGISTER, body))
        try:
            status, acked_id = self._ack.get(timeout=10)
        except queue.Empty:
            raise SessionClosed("no REGISTER_ACK from broker") from None
        if status != 0:
            raise RegistrationRefused(status, acked_id)
        self.controllet_type = controllet_type
        self.instance_id = instance_id
        self._spawn(self._heartbeat_loop, "bus-heartbeat")
        if self.sink is None:
            self._spawn(self._request_loop, "bus-requests")

    def close(self) -> None:
        if self._closed.is_set():
            return
        try:
            self._send(BusFrame(FrameType.BYE))
        except BusError:
            pass
        self._shutdown()

    def __enter__(self) -> BusSession:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def closed(self) -> bool:
        return self._closed.is_set()

    # -- operations -----------------------------------------------------------

    def subscribe(self, pattern: SubscriptionPattern) -> None:
        self._send(BusFrame(FrameType.SUBSCRIBE, fr.pack_pattern(pattern)))

    def unsubscribe(self, pattern: SubscriptionPattern) -> None:
        self._send(BusFrame(FrameType.UNSUBSCRIBE, fr.pack_pattern(pattern)))

    def publish(self, topic: bytes, payload: bytes) -> None:
        self._send(BusFrame(FrameType.PUBLISH, fr.pack_publish(topic, payload)))

    def request(self, target_id: int, payload: bytes,
                timeout: float = DEFAULT_REQUEST_TIMEOUT) -> tuple[int, bytes]:
        """Send an addressed request; returns (status, payload)."""
        pending = _PendingRequest(done=threading.Event())
        with self._pending_lock:
            req_id = self._next_req_id
            self._next_req_id = (self._next_req_id + 1) & 0xFFFFFFFF or 1
            self._pending[req_id] = pending
        try:
            self._send(BusFrame(FrameType.REQUEST, fr.pack_request(target_id, req_id, payload)))
            if not pending.done.wait(timeout):
                raise RequestTimeout(f"no reply from {target_id:#x} within {timeout} s")
        finally:
            with self._pending_lock:
                self._pending.pop(req_id, None)
        if pending.failed:
            raise SessionClosed("connection lost while awaiting reply")
        return pending.status, pending.payload

    def next_event(self, timeout: float | None = None) -> tuple[bytes, bytes] | None:
        """The next (topic, payload) in arrival order; None on timeout."""
        try:
            item = self._events.get(timeout=timeout)
        except queue.Empty:
            return None
        if item is None:
            self._events.put(None)  # keep the sentinel for other callers
            raise SessionClosed("broker connection lost")
        return item

    # -- internals ------------------------------------------------------------

    def _spawn(self, target, name: str) -> None:
        t = threading.Thread(target=target, name=name, daemon=True)
        t.start()
        self._threads.append(t)

    def _send(self, frame: BusFrame) -> None:
        if self._closed.is_set() or self._sock is None:
            raise SessionClosed("session is closed")
        data = fr.frame_encode(frame)
        try:
            with self._send_lock:
                self._sock.sendall(data)
        except OSError as exc:
            self._shutdown()
            raise SessionClosed(f"send failed: {exc}") from exc

    def _read_loop(self) -> None:
        reader = fr.FrameReader()
        sock = self._sock
        try:
            while not self._closed.is_set():
                data = sock.recv(65536)
                if not data:
                    break
                for frame in reader.feed(data):
                    self._dispatch(frame)
        except (OSError, BusProtocolError):
            pass
        self._shutdown()

    def _dispatch(self, frame: BusFrame) -> None:
        ftype = frame.frame_type
        if ftype == FrameType.EVENT:
            topic, payload = fr.unpack_event(frame.body)
            if self.sink is not None:
                self.sink(("event", topic, payload))
            else:
                self._events.put((topic, payload))
        elif ftype == FrameType.REPLY:
            req_id, status, payload = fr.unpack_reply(frame.body)
            with self._pending_lock:
                pending = self._pending.get(req_id)
            if pending is not None:
                pending.status = status
                pending.payload = payload
                pending.done.set()
        elif ftype == FrameType.REQUEST:
            target_id, req_id, payload = fr.unpack_request(frame.body)
            if self.sink is not None:
                self.sink(("request", self._replier(req_id), payload))
            else:
                self._requests_in.put((req_id, payload))
        elif ftype == FrameType.REGISTER_ACK:
            self._ack.put(fr.unpack_register_ack(frame.body))
        # HEARTBEAT/BYE from the broker are not part of the protocol; ignore.

    def _replier(self, req_id: int):
        def reply(status: int, payload: bytes = b"") -> None:
            try:
                self._send(BusFrame(FrameType.REPLY, fr.pack_reply(req_id, status, payload)))
            except BusError:
                pass  # requester will time out; nothing else to do
        return reply

    def _request_loop(self) -> None:
        while not self._closed.is_set():
            try:
                item = self._requests_in.get(timeout=0.5)
            except queue.Empty:
                continue
            if item is None:
                break
            req_id, payload = item
            if self.on_request is None:
                continue  # a silent target: requesters time out
            try:
                status, reply_payload = self.on_request(payload)
            except Exception:  # handler bugs must not kill the session
                status, reply_payload = 1, b""
            try:
                self._send(BusFrame(FrameType.REPLY, fr.pack_reply(req_id, status, reply_payload)))
            except BusError:
                break

    def _heartbeat_loop(self) -> None:
        while not self._closed.wait(self._heartbeat_interval):
            try:
                self._send(BusFrame(FrameType.HEARTBEAT))
            except BusError:
                break

    def _shutdown(self) -> None:
        if self._closed.is_set():
            return
        self._closed.set()
        if self._sock is not None:
            # shutdown() wakes a reader thread blocked in recv and pushes the
            # FIN out immediately; close() alone defers both.
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._sock.close()
            except OSError:
                pass
        with self._pending_lock:
            for pending in self._pending.values():
                pending.failed = True
                pending.done.set()
            self._pending.clear()
        self._events.put(None)
        self._requests_in.put(None)
        if self.sink is not None:
            try:
                self.sink(("disconnect",))
            except Exception:
                pass
        if self.on_disconnect is not None:
            try:
                self.on_disconnect()
            except Exception:
                pass
