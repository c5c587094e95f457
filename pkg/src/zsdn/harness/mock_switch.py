"""A software OpenFlow 1.0 switch, good enough to exercise the control plane.

It speaks the switch side of the handshake, keeps a flow table consulted
highest-priority-first (insertion order breaking ties), and executes the
supported action subset: Output to a physical port, FLOOD/ALL, IN_PORT, and
CONTROLLER.  Ports wire either to a peer mock switch or to a host mailbox;
frames with no matching flow go to the controller as PACKET_INs.

All table logic lives in pure functions over MockSwitchState so tests can
drive it without sockets; MockSwitch adds the connection and a single worker
loop.  Inter-switch forwarding goes through the peer's inbox queue, so a
frame bouncing between switches can never deadlock two worker threads.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

from zsdn import ofcodec as of

log = logging.getLogger(__name__)

# Match fields the mock can actually test against a frame.  Anything else
# must be wildcarded or the FlowMod is refused (unsupported, counted).
_MUST_WILDCARD = (of.OFPFW_DL_VLAN | of.OFPFW_TP_SRC | of.OFPFW_TP_DST
                  | of.OFPFW_DL_VLAN_PCP | of.OFPFW_NW_TOS)


@dataclass
class FlowEntry:
    match: of.Match10
    priority: int
    actions: tuple
    idle_timeout: int
    hard_timeout: int
    installed_at: float
    last_hit: float

    def expired(self, now: float) -> bool:
        if self.idle_timeout and now - self.last_hit > self.idle_timeout:
            return True
        if self.hard_timeout and now - self.installed_at > self.hard_timeout:
            return True
        return False


@dataclass
class Counters:
    packet_ins: int = 0
    flow_mods: int = 0
    packet_outs: int = 0
    forwarded: int = 0
    dropped: int = 0
    errors: int = 0


@dataclass
class MockSwitchState:
    dpid: int
    ports: tuple[int, ...]
    flow_table: list[FlowEntry] = field(default_factory=list)
    counters: Counters = field(default_factory=Counters)
    next_xid: int = 1


def match_is_supported(match: of.Match10) -> bool:
    w = match.wildcards
    if (w & _MUST_WILDCARD) != _MUST_WILDCARD:
        return False
    nw_src_bits = (w & of.OFPFW_NW_SRC_MASK) >> of.OFPFW_NW_SRC_SHIFT
    nw_dst_bits = (w & of.OFPFW_NW_DST_MASK) >> of.OFPFW_NW_DST_SHIFT
    return nw_src_bits >= 32 and nw_dst_bits >= 32


def frame_matches(match: of.Match10, frame: bytes, in_port: int) -> bool:
    """Does this frame, arriving on in_port, satisfy the (supported) match?"""
    w = match.wildcards
    if not w & of.OFPFW_IN_PORT and match.in_port != in_port:
        return False
    l2_ok = len(frame) >= 14
    if not w & of.OFPFW_DL_DST and (not l2_ok or frame[0:6] != match.dl_dst):
        return False
    if not w & of.OFPFW_DL_SRC and (not l2_ok or frame[6:12] != match.dl_src):
        return False
    if not w & of.OFPFW_DL_TYPE:
        if not l2_ok or int.from_bytes(frame[12:14], "big") != match.dl_type:
            return False
    if not w & of.OFPFW_NW_PROTO:
        try:
            fc = of.classify_frame(frame)
        except of.FrameClassifyError:
            return False
        if fc.ip_proto is None or fc.ip_proto != match.nw_proto:
            return False
    return True


def table_lookup(state: MockSwitchState, frame: bytes, in_port: int,
                 now: float) -> FlowEntry | None:
    """Highest priority wins; the stable sort keeps insertion order for ties."""
    state.flow_table[:] = [e for e in state.flow_table if not e.expired(now)]
    for entry in sorted(state.flow_table, key=lambda e: -e.priority):
        if frame_matches(entry.match, frame, in_port):
            entry.last_hit = now
            return entry
    return None


# Effects a pure step can produce; the I/O layer interprets them.
#   ("egress", port, frame)    frame leaves a switch port
#   ("to_controller", raw)     bytes for the OpenFlow socket


def _run_actions(state: MockSwitchState, actions, in_port: int, frame: bytes,
                 reason: int = of.OFPR_ACTION) -> list[tuple]:
    effects: list[tuple] = []
    for action in actions:
        port = action.port
        if port in (of.OFPP_FLOOD, of.OFPP_ALL):
            effects += [("egress", p, frame) for p in state.ports if p != in_port]
        elif port == of.OFPP_IN_PORT:
            effects.append(("egress", in_port, frame))
        elif port == of.OFPP_CONTROLLER:
            effects.append(("to_controller", _packet_in(state, in_port, frame, reason)))
        elif port in state.ports:
            effects.append(("egress", port, frame))
        else:
            state.counters.dropped += 1
    return effects


def _packet_in(state: MockSwitchState, in_port: int, frame: bytes, reason: int) -> bytes:
    state.counters.packet_ins += 1
    xid, state.next_xid = state.next_xid, state.next_xid + 1
    return of.encode(of.PacketIn(xid=xid, buffer_id=of.NO_BUFFER, total_len=len(frame),
                                 in_port=in_port, reason=reason, frame=frame))


def state_handle_frame(state: MockSwitchState, in_port: int, frame: bytes,
                       now: float) -> list[tuple]:
    """A frame arrives on a port: flow table hit or PACKET_IN."""
    entry = table_lookup(state, frame, in_port, now)
    if entry is None:
        return [("to_controller", _packet_in(state, in_port, frame, of.OFPR_NO_MATCH))]
    return _run_actions(state, entry.actions, in_port, frame)


def state_apply_flow_mod(state: MockSwitchState, fm: of.FlowMod, now: float) -> None:
    if (fm.command != of.OFPFC_ADD
            or not all(isinstance(a, of.OutputAction) for a in fm.actions)
            or not match_is_supported(fm.match)):
        state.counters.errors += 1
        return
    state.counters.flow_mods += 1
    state.flow_table.append(FlowEntry(
        match=fm.match, priority=fm.priority, actions=fm.actions,
        idle_timeout=fm.idle_timeout, hard_timeout=fm.hard_timeout,
        installed_at=now, last_hit=now,
    ))


def state_apply_packet_out(state: MockSwitchState, po: of.PacketOut) -> list[tuple]:
    if (po.buffer_id != of.NO_BUFFER
            or not all(isinstance(a, of.OutputAction) for a in po.actions)):
        state.counters.errors += 1  # we never buffer, so there is nothing to release
        return []
    state.counters.packet_outs += 1
    return _run_actions(state, po.actions, po.in_port, po.frame)


def switch_side_handshake(sock: socket.socket, state: MockSwitchState,
                          timeout: float = 10.0) -> None:
    """Answer the controller's handshake: Hello out, FeaturesReply on request."""
    sock.settimeout(timeout)
    sock.sendall(of.encode(of.Hello(xid=state.next_xid)))
    state.next_xid += 1
    buf = of.OfStreamBuffer()
    deadline = time.monotonic() + timeout
    while True:
        if time.monotonic() > deadline:
            raise TimeoutError("controller never asked for features")
        data = sock.recv(65536)
        if not data:
            raise ConnectionError("controller closed during handshake")
        for raw in buf.feed(data):
            msg = of.decode(raw)
            if isinstance(msg, of.EchoRequest):
                sock.sendall(of.encode(of.EchoReply(xid=msg.xid, data=msg.data)))
            elif isinstance(msg, of.FeaturesRequest):
                ports = tuple(
                    of.PortDesc(p, _port_mac(state.dpid, p), f"p{p}")
                    for p in state.ports
                )
                sock.sendall(of.encode(of.FeaturesReply(
                    xid=msg.xid, datapath_id=state.dpid, n_buffers=0,
                    n_tables=1, ports=ports)))
                sock.settimeout(None)
                return


def _port_mac(dpid: int, port: int) -> bytes:
    return bytes([0x06]) + dpid.to_bytes(3, "big")[-3:] + port.to_bytes(2, "big")


class MockSwitch:
    """One mock switch: a connection to its SA plus a worker loop.

    Wiring is set up before (or while) traffic flows via wire()/attach_host().
    inject() is how hosts put frames on the wire; it is safe from any thread.
    """

    def __init__(self, dpid: int, ports: tuple[int, ...] | list[int]):
        self.state = MockSwitchState(dpid, tuple(ports))
        self.port_links: dict[int, tuple] = {}  # port -> ("switch", MockSwitch, port) | ("host", list)
        self.inbox: queue.Queue = queue.Queue()
        self.ctrl_msgs = 0  # flow-mods + packet-outs received, for closed-loop driving
        self._ctrl_cv = threading.Condition()
        self._sock: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._stopped = threading.Event()

    # -- lifecycle --------------------------------------------------------------

    def connect(self, address: str, timeout: float = 10.0) -> "MockSwitch":
        host, _, port = address.rpartition(":")
        self._sock = socket.create_connection((host or "127.0.0.1", int(port)),
                                              timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        switch_side_handshake(self._sock, self.state, timeout)
        self._spawn(self._read_loop, "mock-of-reader")
        self._spawn(self._worker, "mock-worker")
        return self

    def start_detached(self) -> "MockSwitch":
        """Worker without a controller connection: pure data-plane testing."""
        self._spawn(self._worker, "mock-worker")
        return self

    def stop(self) -> None:
        if self._stopped.is_set():
            return
        self._stopped.set()
        self.inbox.put(("stop",))
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()
        for t in self._threads:
            t.join(timeout=5)

    def _spawn(self, target, name: str) -> None:
        t = threading.Thread(target=target, name=f"{name}-{self.state.dpid:x}", daemon=True)
        t.start()
        self._threads.append(t)

    # -- the wire ---------------------------------------------------------------

    def inject(self, in_port: int, frame: bytes) -> None:
        self.inbox.put(("frame", in_port, frame))

    def wait_ctrl_msgs(self, n: int, timeout: float) -> bool:
        """Block until n controller messages (FlowMod/PacketOut) have arrived."""
        deadline = time.monotonic() + timeout
        with self._ctrl_cv:
            while self.ctrl_msgs < n:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._ctrl_cv.wait(remaining)
        return True

    # -- loops ------------------------------------------------------------------

    def _read_loop(self) -> None:
        buf = of.OfStreamBuffer()
        try:
            while not self._stopped.is_set():
                data = self._sock.recv(65536)
                if not data:
                    break
                for raw in buf.feed(data):
                    self.inbox.put(("of", raw))
        except OSError:
            pass
        self.inbox.put(("of_closed",))

    def _worker(self) -> None:
        while True:
            item = self.inbox.get()
            kind = item[0]
            if kind == "stop":
                return
            if kind == "of_closed":
                log.info("mock %#x: controller connection closed", self.state.dpid)
                continue  # keep forwarding on installed flows
            now = time.monotonic()
            if kind == "frame":
                _, in_port, frame = item
                self._run(state_handle_frame(self.state, in_port, frame, now))
            elif kind == "of":
                self._on_controller_msg(item[1], now)

    def _on_controller_msg(self, raw: bytes, now: float) -> None:
        try:
            msg = of.decode(raw)
        except of.OfDecodeError as exc:
            log.warning("mock %#x: bad message from controller: %s", self.state.dpid, exc)
            self.state.counters.errors += 1
            return
        if isinstance(msg, of.EchoRequest):
            self._send(of.encode(of.EchoReply(xid=msg.xid, data=msg.data)))
            return
        if isinstance(msg, of.FlowMod):
            state_apply_flow_mod(self.state, msg, now)
            self._bump_ctrl()
        elif isinstance(msg, of.PacketOut):
            self._run(state_apply_packet_out(self.state, msg))
            self._bump_ctrl()
        # anything else (Hello retries, features, opaque): ignored

    def _bump_ctrl(self) -> None:
        with self._ctrl_cv:
            self.ctrl_msgs += 1
            self._ctrl_cv.notify_all()

    def _run(self, effects: list[tuple]) -> None:
        for effect in effects:
            if effect[0] == "to_controller":
                self._send(effect[1])
            else:
                _, port, frame = effect
                self._egress(port, frame)

    def _egress(self, port: int, frame: bytes) -> None:
        link = self.port_links.get(port)
        if link is None:
            self.state.counters.dropped += 1
            return
        self.state.counters.forwarded += 1
        if link[0] == "switch":
            _, peer, peer_port = link
            peer.inject(peer_port, frame)
        else:
            link[1].append(frame)

    def _send(self, data: bytes) -> None:
        if self._sock is None:
            return
        try:
            self._sock.sendall(data)
        except OSError:
            pass


def wire(a: MockSwitch, port_a: int, b: MockSwitch, port_b: int) -> None:
    """Connect two switch ports back to back."""
    a.port_links[port_a] = ("switch", b, port_b)
    b.port_links[port_b] = ("switch", a, port_a)


def attach_host(sw: MockSwitch, port: int, mailbox: list) -> None:
    """A host on this port: every egressing frame lands in its mailbox."""
    sw.port_links[port] = ("host", mailbox)
