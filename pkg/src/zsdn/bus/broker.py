"""The message bus broker.

``BrokerCore`` is a pure state machine: every input (a frame from a
connection, a disconnect, a liveness sweep) maps deterministically to a list
of outbound ``(conn_id, BusFrame)`` pairs, which makes routing decisions
directly testable and replayable.  ``BrokerServer`` wraps the core in a
non-blocking TCP event loop.

Built-in services: connection lifecycle is announced as JOIN/LEAVE events on
the system topic namespace, and the broker itself answers registry requests
addressed to the reserved instance id 0 (opcode 0x01 LIST).
"""

from __future__ import annotations

import logging
import selectors
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

from zsdn import topic as tp
from zsdn.bus import frames as fr
from zsdn.bus.frames import BusFrame, BusProtocolError, FrameType

log = logging.getLogger(__name__)

HEARTBEAT_INTERVAL = 2.0
DEAD_AFTER = 6.0
SWEEP_INTERVAL = 1.0

BROKER_ID = 0
OP_LIST = 0x01
OP_PORTS = 0x02
OP_LINKS = 0x03
OP_STATS = 0x04

JOIN = 0x01
LEAVE = 0x02

# A connection that cannot drain this much queued output is dropped.
MAX_SEND_BUFFER = 64 * 1024 * 1024

Outbound = tuple[int, BusFrame]


@dataclass
class Registration:
    conn_id: int
    controllet_type: int
    instance_id: int
    to_patterns: tuple[tp.SubscriptionPattern, ...]
    from_topics: tuple[bytes, ...]
    last_heartbeat: float


@dataclass
class BrokerCore:
    """Deterministic broker state machine; no I/O, no clocks of its own."""

    dead_after: float = DEAD_AFTER
    _regs: dict[int, Registration] = field(default_factory=dict)  # conn_id -> reg
    _by_instance: dict[int, int] = field(default_factory=dict)  # instance_id -> conn_id
    _subs: dict[int, list[tp.SubscriptionPattern]] = field(default_factory=dict)
    _pending: dict[int, tuple[int, int]] = field(default_factory=dict)  # broker req_id -> (origin conn, origin req_id)
    _next_req_id: int = 1

    def registrations(self) -> list[Registration]:
        return sorted(self._regs.values(), key=lambda r: r.instance_id)

    def instance_of(self, conn_id: int) -> int | None:
        reg = self._regs.get(conn_id)
        return None if reg is None else reg.instance_id

    def route(self, topic: bytes) -> list[int]:
        """Connections with at least one matching pattern, ascending, deduped."""
        return [
            conn_id
            for conn_id in sorted(self._subs)
            if any(tp.matches(p, topic) for p in self._subs[conn_id])
        ]

    # -- frame handling ---------------------------------------------------

    def handle_frame(self, conn_id: int, frame: BusFrame, now: float) -> list[Outbound]:
        ftype = frame.frame_type
        if ftype == FrameType.HEARTBEAT:
            reg = self._regs.get(conn_id)
            if reg is not None:
                reg.last_heartbeat = now
            return []
        if ftype == FrameType.REGISTER:
            return self._on_register(conn_id, frame.body, now)
        reg = self._regs.get(conn_id)
        if reg is None:
            raise BusProtocolError(f"frame type 0x{ftype:02X} before REGISTER")
        if ftype == FrameType.SUBSCRIBE:
            pattern, _ = fr.unpack_pattern(frame.body, 0)
            self._subs[conn_id].append(pattern)
            return []
        if ftype == FrameType.UNSUBSCRIBE:
            pattern, _ = fr.unpack_pattern(frame.body, 0)
            subs = self._subs[conn_id]
            if pattern in subs:
                subs.remove(pattern)
            return []
        if ftype == FrameType.PUBLISH:
            topic, payload = fr.unpack_publish(frame.body)
            event = BusFrame(FrameType.EVENT, fr.pack_event(topic, payload))
            return [(c, event) for c in self.route(topic) if c != conn_id]
        if ftype == FrameType.REQUEST:
            return self._on_request(conn_id, frame.body)
        if ftype == FrameType.REPLY:
            return self._on_reply(frame.body)
        if ftype == FrameType.BYE:
            return self.handle_disconnect(conn_id)
        raise BusProtocolError(f"unexpected frame type 0x{ftype:02X} from a client")

    def _on_register(self, conn_id: int, body: bytes, now: float) -> list[Outbound]:
        if conn_id in self._regs:
            raise BusProtocolError("second REGISTER on one connection")
        ctype, instance_id, patterns, from_topics = fr.unpack_register(body)
        if instance_id == BROKER_ID or instance_id in self._by_instance:
            ack = BusFrame(FrameType.REGISTER_ACK, fr.pack_register_ack(1, instance_id))
            return [(conn_id, ack)]
        reg = Registration(conn_id, ctype, instance_id, patterns, from_topics, now)
        self._regs[conn_id] = reg
        self._by_instance[instance_id] = conn_id
        self._subs[conn_id] = list(patterns)
        out: list[Outbound] = [
            (conn_id, BusFrame(FrameType.REGISTER_ACK, fr.pack_register_ack(0, instance_id)))
        ]
        out.extend(self._lifecycle_event(JOIN, reg))
        return out

    def _lifecycle_event(self, code: int, reg: Registration) -> list[Outbound]:
        # The subject never hears about itself, mirroring publish echo-exclusion.
        topic = tp.encode_lifecycle_topic(code)
        payload = fr.pack_lifecycle_payload(reg.controllet_type, reg.instance_id)
        event = BusFrame(FrameType.EVENT, fr.pack_event(topic, payload))
        return [(c, event) for c in self.route(topic) if c != reg.conn_id]

    def _on_request(self, conn_id: int, body: bytes) -> list[Outbound]:
        target_id, req_id, payload = fr.unpack_request(body)
        if target_id == BROKER_ID:
            return [(conn_id, BusFrame(FrameType.REPLY, self._serve_registry(req_id, payload)))]
        target_conn = self._by_instance.get(target_id)
        if target_conn is None:
            return [(conn_id, BusFrame(FrameType.REPLY, fr.pack_reply(req_id, 1, b"")))]
        # Forward under a broker-local req_id so ids from different origins
        # can never collide at the responder.
        broker_req_id = self._next_req_id
        self._next_req_id = (self._next_req_id + 1) & 0xFFFFFFFF or 1
        self._pending[broker_req_id] = (conn_id, req_id)
        forwarded = BusFrame(FrameType.REQUEST, fr.pack_request(target_id, broker_req_id, payload))
        return [(target_conn, forwarded)]

    def _on_reply(self, body: bytes) -> list[Outbound]:
        broker_req_id, status, payload = fr.unpack_reply(body)
        origin = self._pending.pop(broker_req_id, None)
        if origin is None:
            return []  # origin vanished or reply is stale
        origin_conn, origin_req_id = origin
        if origin_conn not in self._subs:
            return []
        return [(origin_conn, BusFrame(FrameType.REPLY, fr.pack_reply(origin_req_id, status, payload)))]

    def _serve_registry(self, req_id: int, payload: bytes) -> bytes:
        opcode = payload[0] if payload else 0
        if opcode != OP_LIST:
            return fr.pack_reply(req_id, 1, b"")
        regs = self.registrations()
        body = len(regs).to_bytes(2, "big") + b"".join(
            struct.pack("!HQ", r.controllet_type, r.instance_id) for r in regs
        )
        return fr.pack_reply(req_id, 0, body)

    # -- departures ---------------------------------------------------------

    def handle_disconnect(self, conn_id: int) -> list[Outbound]:
        reg = self._regs.pop(conn_id, None)
        self._subs.pop(conn_id, None)
        for broker_req_id in [r for r, (origin, _) in self._pending.items() if origin == conn_id]:
            del self._pending[broker_req_id]
        if reg is None:
            return []
        del self._by_instance[reg.instance_id]
        return self._lifecycle_event(LEAVE, reg)

    def sweep(self, now: float) -> tuple[list[Outbound], list[int]]:
        """Drop registrations whose heartbeats stopped; returns (events, conns to close)."""
        stale = sorted(
            (reg for reg in self._regs.values() if now - reg.last_heartbeat > self.dead_after),
            key=lambda r: r.instance_id,
        )
        out: list[Outbound] = []
        closed: list[int] = []
        for reg in stale:
            out.extend(self.handle_disconnect(reg.conn_id))
            closed.append(reg.conn_id)
        return out, closed


class _Conn:
    def __init__(self, conn_id: int, sock: socket.socket):
        self.conn_id = conn_id
        self.sock = sock
        self.reader = fr.FrameReader()
        self.out = bytearray()
        self.closing = False  # flush remaining output, then close


class BrokerServer:
    """Non-blocking TCP server wrapping a BrokerCore.

    All core transitions happen on the event-loop thread, so the broker
    behaves as one logical event loop no matter how many connections exist.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 7633, *,
                 dead_after: float = DEAD_AFTER, sweep_interval: float = SWEEP_INTERVAL):
        self.core = BrokerCore(dead_after=dead_after)
        self._sweep_interval = sweep_interval
        self._sel = selectors.DefaultSelector()
        self._listen = socket.create_server((host, port))
        self._listen.setblocking(False)
        self.host, self.port = self._listen.getsockname()[:2]
        self._sel.register(self._listen, selectors.EVENT_READ, "listen")
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)
        self._sel.register(self._wake_r, selectors.EVENT_READ, "wake")
        self._conns: dict[int, _Conn] = {}
        self._next_conn_id = 1
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self) -> BrokerServer:
        self._thread = threading.Thread(target=self.serve_forever, name="zsdn-broker", daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self._stop.set()
        try:
            self._wake_w.send(b"\x00")
        except OSError:
            pass
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        last_sweep = time.monotonic()
        try:
            while not self._stop.is_set():
                for key, _ in self._sel.select(timeout=0.2):
                    if key.data == "listen":
                        self._accept()
                    elif key.data == "wake":
                        try:
                            self._wake_r.recv(4096)
                        except OSError:
                            pass
                    else:
                        self._service(key.data)
                now = time.monotonic()
                if now - last_sweep >= self._sweep_interval:
                    last_sweep = now
                    events, closed = self.core.sweep(now)
                    self._dispatch(events)
                    for conn_id in closed:
                        self._close(conn_id, notify_core=False)
        finally:
            for conn_id in list(self._conns):
                self._close(conn_id, notify_core=False)
            self._sel.close()
            self._listen.close()
            self._wake_r.close()
            self._wake_w.close()

    # -- internals ----------------------------------------------------------

    def _accept(self) -> None:
        try:
            sock, _ = self._listen.accept()
        except OSError:
            return
        sock.setblocking(False)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn = _Conn(self._next_conn_id, sock)
        self._next_conn_id += 1
        self._conns[conn.conn_id] = conn
        self._sel.register(sock, selectors.EVENT_READ, conn)

    def _service(self, conn: _Conn) -> None:
        if conn.conn_id not in self._conns:
            return
        try:
            data = conn.sock.recv(65536)
        except BlockingIOError:
            data = None
        except OSError:
            self._close(conn.conn_id)
            return
        if data is not None:
            if not data:
                self._close(conn.conn_id)
                return
            try:
                frames = conn.reader.feed(data)
                now = time.monotonic()
                for frame in frames:
                    self._dispatch(self.core.handle_frame(conn.conn_id, frame, now))
                    if frame.frame_type == FrameType.BYE:
                        self._close(conn.conn_id, notify_core=False)
                        return
            except BusProtocolError as exc:
                log.warning("conn %d: %s", conn.conn_id, exc)
                self._close(conn.conn_id)
                return
        self._flush(conn)

    def _dispatch(self, outbound: list[Outbound]) -> None:
        for conn_id, frame in outbound:
            conn = self._conns.get(conn_id)
            if conn is None or conn.closing:
                continue
            conn.out.extend(fr.frame_encode(frame))
            if len(conn.out) > MAX_SEND_BUFFER:
                log.warning("conn %d: send buffer overflow, dropping", conn_id)
                self._close(conn_id)
                continue
            self._flush(conn)

    def _flush(self, conn: _Conn) -> None:
        if conn.conn_id not in self._conns:
            return
        while conn.out:
            try:
                sent = conn.sock.send(bytes(conn.out[:262144]))
            except BlockingIOError:
                break
            except OSError:
                self._close(conn.conn_id)
                return
            del conn.out[:sent]
        want = selectors.EVENT_READ | (selectors.EVENT_WRITE if conn.out else 0)
        try:
            self._sel.modify(conn.sock, want, conn)
        except (KeyError, ValueError):
            pass

    def _close(self, conn_id: int, *, notify_core: bool = True) -> None:
        conn = self._conns.pop(conn_id, None)
        if conn is None:
            return
        try:
            self._sel.unregister(conn.sock)
        except (KeyError, ValueError):
            pass
        try:
            conn.sock.close()
        except OSError:
            pass
        if notify_core:
            self._dispatch(self.core.handle_disconnect(conn_id))
