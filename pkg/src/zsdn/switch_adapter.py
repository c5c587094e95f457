"""The SwitchAdapter (SA): one OpenFlow switch's representative on the bus.

From the switch's perspective the SA is its controller: it runs the OpenFlow
handshake, answers echoes, and converts between the two worlds — switch
events become bus publications (PACKET_IN topics carry a round-robin
LB_GROUP byte plus the frame's ethertype/IP-protocol layers), and bus events
addressed to this datapath are relayed verbatim to the switch.
"""

from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass, field

from zsdn import ofcodec as of
from zsdn import topic as tp
from zsdn.bus.broker import OP_PORTS, OP_STATS
from zsdn.kernel import Controllet

log = logging.getLogger(__name__)

HANDSHAKE_TIMEOUT = 10.0
DEFAULT_OF_LISTEN = "0.0.0.0:6633"


class HandshakeError(Exception):
    pass


@dataclass
class SaSession:
    """Mutable per-switch state; touched only by the SA's loop thread."""

    datapath_id: int
    ports: list[of.PortDesc]
    lb_group_count: int = 1
    lb_counter: int = 0
    published_packet_ins: int = 0
    drops_unclassified: int = 0
    drops_undecodable: int = 0
    drops_not_active: int = 0

    def port_numbers(self) -> list[int]:
        return sorted(p.port_no for p in self.ports if p.port_no < of.OFPP_IN_PORT)


def to_switch_pattern(datapath_id: int) -> tp.SubscriptionPattern:
    """The SA's single TO pattern: every OF message addressed to its switch."""
    prefix = bytes([tp.TO, 0x00, 0x00]) + datapath_id.to_bytes(8, "big") + bytes([tp.OPENFLOW])
    return tp.SubscriptionPattern.literal(prefix)


def lb_assign(session: SaSession) -> int:
    """Next LB_GROUP byte, strict round robin over arrival order."""
    group = session.lb_counter % session.lb_group_count
    session.lb_counter += 1
    return group


def publish_switch_msg(session: SaSession, msg: of.OfMessage, raw: bytes) -> tuple[bytes, bytes] | None:
    """Map one inbound switch message to a bus publication, or None.

    The payload always leads with the 8-byte datapath id so subscribers can
    attribute FROM events (whose topics carry no switch layer).
    """
    payload = session.datapath_id.to_bytes(8, "big") + raw
    if isinstance(msg, of.PacketIn):
        try:
            fc = of.classify_frame(msg.frame)
            topic = tp.encode_packet_in_topic(lb_assign(session), fc.ethertype, fc.ip_proto)
        except (of.FrameClassifyError, tp.TopicError):
            session.drops_unclassified += 1
            return None
        session.published_packet_ins += 1
        return topic, payload
    if isinstance(msg, of.PortStatus):
        return tp.encode_port_status_topic(), payload
    return None


def relay_bus_event(session: SaSession, payload: bytes) -> bytes | None:
    """Sanity-check an addressed OF payload; returns the bytes to forward."""
    try:
        of.decode(payload)
    except of.OfDecodeError:
        session.drops_undecodable += 1
        return None
    return payload


def answer_ports_request(session: SaSession, payload: bytes) -> tuple[int, bytes]:
    opcode = payload[0] if payload else 0
    if opcode == OP_PORTS:
        ports = session.port_numbers()
        return 0, len(ports).to_bytes(2, "big") + b"".join(p.to_bytes(2, "big") for p in ports)
    if opcode == OP_STATS:
        stats = (session.published_packet_ins, session.drops_unclassified,
                 session.drops_undecodable, session.drops_not_active)
        return 0, b"".join(v.to_bytes(8, "big") for v in stats)
    return 1, b""


def handshake(sock: socket.socket, timeout: float = HANDSHAKE_TIMEOUT) -> tuple[int, list[of.PortDesc]]:
    """Controller side of the OpenFlow 1.0 handshake.

    Sends Hello and FeaturesRequest, answers echoes, and returns once the
    FeaturesReply arrives.  Any version mismatch or timeout closes the
    connection via HandshakeError.
    """
    sock.settimeout(timeout)
    buf = of.OfStreamBuffer()
    try:
        sock.sendall(of.encode(of.Hello(xid=1)) + of.encode(of.FeaturesRequest(xid=2)))
        while True:
            data = sock.recv(65536)
            if not data:
                raise HandshakeError("switch closed during handshake")
            for raw in buf.feed(data):
                msg = of.decode(raw)
                if isinstance(msg, of.FeaturesReply):
                    sock.settimeout(None)
                    return msg.datapath_id, list(msg.ports)
                if isinstance(msg, of.EchoRequest):
                    sock.sendall(of.encode(of.EchoReply(xid=msg.xid, data=msg.data)))
                # Hello and anything else: no action needed pre-features
    except socket.timeout:
        raise HandshakeError(f"no FeaturesReply within {timeout} s") from None
    except of.OfDecodeError as exc:
        raise HandshakeError(f"malformed handshake message: {exc}") from exc


class SwitchAdapter(Controllet):
    """Bridges one handshaken switch connection onto the bus."""

    def __init__(self, of_sock: socket.socket, datapath_id: int, ports: list[of.PortDesc],
                 *, lb_groups: int = 1, bus_addr: str | None = None):
        if lb_groups < 1:
            raise ValueError("lb_groups must be >= 1")
        super().__init__(
            tp.SWITCH_ADAPTER,
            instance_id=datapath_id,
            bus_addr=bus_addr,
            to_patterns=(to_switch_pattern(datapath_id),),
            from_topics=(
                bytes([tp.FROM, 0x00, 0x00, tp.OPENFLOW, tp.PACKET_IN]),
                tp.encode_port_status_topic(),
            ),
        )
        self.sa = SaSession(datapath_id, list(ports), lb_group_count=lb_groups)
        self._of_sock = of_sock
        self._of_reader_started = False
        self._start_of_reader()

    # -- switch side ----------------------------------------------------------

    def _start_of_reader(self) -> None:
        if self._of_reader_started:
            return
        self._of_reader_started = True
        threading.Thread(target=self._of_read_loop,
                         name=f"sa-of-{self.sa.datapath_id:x}", daemon=True).start()

    def _of_read_loop(self) -> None:
        buf = of.OfStreamBuffer()
        try:
            while not self._stop.is_set():
                data = self._of_sock.recv(65536)
                if not data:
                    break
                for raw in buf.feed(data):
                    self.inbox_put(("of", raw))
        except (OSError, of.OfDecodeError):
            pass
        self.inbox_put(("of_closed",))

    def _send_to_switch(self, data: bytes) -> None:
        try:
            self._of_sock.sendall(data)
        except OSError:
            self.inbox_put(("of_closed",))

    # -- loop callbacks ---------------------------------------------------------

    def on_inbox(self, item: tuple) -> None:
        if item[0] == "of_closed":
            log.info("sa %#x: switch connection closed, stopping", self.sa.datapath_id)
            self._stop.set()
            return
        raw = item[1]
        try:
            msg = of.decode(raw)
        except of.OfDecodeError as exc:
            log.warning("sa %#x: bad message from switch: %s", self.sa.datapath_id, exc)
            return
        if isinstance(msg, of.EchoRequest):
            self._send_to_switch(of.encode(of.EchoReply(xid=msg.xid, data=msg.data)))
            return
        if self.state.name != "ACTIVE":
            self.sa.drops_not_active += 1
            return
        publication = publish_switch_msg(self.sa, msg, raw)
        if publication is not None:
            self.publish(*publication)

    def on_event(self, topic: bytes, payload: bytes) -> None:
        data = relay_bus_event(self.sa, payload)
        if data is not None:
            self._send_to_switch(data)

    def on_request(self, payload: bytes) -> tuple[int, bytes]:
        return answer_ports_request(self.sa, payload)


def accept_one_switch(listen_addr: str, *, lb_groups: int = 1,
                      bus_addr: str | None = None, on_listening=None) -> SwitchAdapter:
    """Listen, accept a single switch, handshake, and build the adapter.

    ``on_listening(host, port)`` fires once the socket is bound, which is how
    callers using an ephemeral port learn where to point their switch.
    """
    host, _, port = listen_addr.rpartition(":")
    server = socket.create_server((host or "0.0.0.0", int(port)))
    if on_listening is not None:
        on_listening(*server.getsockname()[:2])
    try:
        sock, _ = server.accept()
    finally:
        server.close()
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    dpid, ports = handshake(sock)
    return SwitchAdapter(sock, dpid, ports, lb_groups=lb_groups, bus_addr=bus_addr)
