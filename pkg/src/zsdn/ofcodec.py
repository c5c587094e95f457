"""OpenFlow 1.0 wire codec for the message subset the control plane uses.

Implements bit-exact big-endian encode/decode per the public OpenFlow 1.0.0
specification for: HELLO, ECHO_REQUEST/REPLY, FEATURES_REQUEST/REPLY,
PACKET_IN, PACKET_OUT, FLOW_MOD and PORT_STATUS.  Every other well-formed
message type round-trips verbatim through the ``Opaque`` variant.

Also houses the Ethernet-frame classifier that feeds the topic encoder
(ethertype, and IPv4 protocol when present) and a minimal LLDP frame
builder/parser used for link discovery.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

OFP_VERSION = 0x01
OFP_HEADER_LEN = 8
OFP_MAX_LEN = 0xFFFF
OFP_MAX_FRAME = OFP_MAX_LEN - OFP_HEADER_LEN  # 65527

NO_BUFFER = 0xFFFFFFFF

# Reserved port numbers
OFPP_IN_PORT = 0xFFF8
OFPP_TABLE = 0xFFF9
OFPP_NORMAL = 0xFFFA
OFPP_FLOOD = 0xFFFB
OFPP_ALL = 0xFFFC
OFPP_CONTROLLER = 0xFFFD
OFPP_LOCAL = 0xFFFE
OFPP_NONE = 0xFFFF

# Flow mod commands
OFPFC_ADD = 0
OFPFC_DELETE = 3

# Packet-in reasons
OFPR_NO_MATCH = 0
OFPR_ACTION = 1

# ofp_flow_wildcards flags
OFPFW_IN_PORT = 1 << 0
OFPFW_DL_VLAN = 1 << 1
OFPFW_DL_SRC = 1 << 2
OFPFW_DL_DST = 1 << 3
OFPFW_DL_TYPE = 1 << 4
OFPFW_NW_PROTO = 1 << 5
OFPFW_TP_SRC = 1 << 6
OFPFW_TP_DST = 1 << 7
OFPFW_NW_SRC_SHIFT = 8
OFPFW_NW_SRC_MASK = 0x3F << OFPFW_NW_SRC_SHIFT
OFPFW_NW_DST_SHIFT = 14
OFPFW_NW_DST_MASK = 0x3F << OFPFW_NW_DST_SHIFT
OFPFW_DL_VLAN_PCP = 1 << 20
OFPFW_NW_TOS = 1 << 21
OFPFW_ALL = (1 << 22) - 1

ETH_IPV4 = 0x0800
ETH_ARP = 0x0806
ETH_LLDP = 0x88CC

LLDP_DST_MAC = bytes.fromhex("0180C200000E")


class OfType(IntEnum):
    HELLO = 0
    ERROR = 1
    ECHO_REQUEST = 2
    ECHO_REPLY = 3
    VENDOR = 4
    FEATURES_REQUEST = 5
    FEATURES_REPLY = 6
    GET_CONFIG_REQUEST = 7
    GET_CONFIG_REPLY = 8
    SET_CONFIG = 9
    PACKET_IN = 10
    FLOW_REMOVED = 11
    PORT_STATUS = 12
    PACKET_OUT = 13
    FLOW_MOD = 14
    PORT_MOD = 15
    STATS_REQUEST = 16
    STATS_REPLY = 17
    BARRIER_REQUEST = 18
    BARRIER_REPLY = 19
    QUEUE_GET_CONFIG_REQUEST = 20
    QUEUE_GET_CONFIG_REPLY = 21


class OfDecodeError(ValueError):
    """Malformed OpenFlow bytes; ``offset`` locates the offending field."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class OfEncodeError(ValueError):
    """Message fields cannot be represented on the wire."""


_HEADER = struct.Struct("!BBHI")
_PHY_PORT = struct.Struct("!H6s16sIIIIII")
_FEATURES_FIXED = struct.Struct("!QIB3xII")
_PACKET_IN_FIXED = struct.Struct("!IHHBx")
_PACKET_OUT_FIXED = struct.Struct("!IHH")
_MATCH = struct.Struct("!IH6s6sHBxHBB2xIIHH")
_FLOW_MOD_FIXED = struct.Struct("!QHHHHIHH")
_PORT_STATUS_FIXED = struct.Struct("!B7x")
_ACTION_HEADER = struct.Struct("!HH")
_ACTION_OUTPUT = struct.Struct("!HHHH")


@dataclass(frozen=True)
class PortDesc:
    """One ofp_phy_port entry (48 bytes on the wire)."""

    port_no: int
    hw_addr: bytes = b"\x00" * 6
    name: str = ""
    config: int = 0
    state: int = 0
    curr: int = 0
    advertised: int = 0
    supported: int = 0
    peer: int = 0

    def pack(self) -> bytes:
        name = self.name.encode("latin-1", "replace")[:16]
        return _PHY_PORT.pack(
            self.port_no, self.hw_addr, name.ljust(16, b"\x00"),
            self.config, self.state, self.curr, self.advertised, self.supported, self.peer,
        )

    @classmethod
    def unpack(cls, buf: bytes, offset: int) -> PortDesc:
        port_no, hw, name, config, state, curr, adv, sup, peer = _PHY_PORT.unpack_from(buf, offset)
        return cls(port_no, hw, name.rstrip(b"\x00").decode("latin-1"),
                   config, state, curr, adv, sup, peer)


@dataclass(frozen=True)
class Match10:
    """OpenFlow 1.0 ofp_match (40 bytes). Wildcarded fields encode as zero."""

    wildcards: int = OFPFW_ALL
    in_port: int = 0
    dl_src: bytes = b"\x00" * 6
    dl_dst: bytes = b"\x00" * 6
    dl_vlan: int = 0
    dl_vlan_pcp: int = 0
    dl_type: int = 0
    nw_tos: int = 0
    nw_proto: int = 0
    nw_src: int = 0
    nw_dst: int = 0
    tp_src: int = 0
    tp_dst: int = 0

    @classmethod
    def exact_dl_dst(cls, mac: bytes) -> Match10:
        """Match frames by destination MAC only."""
        return cls(wildcards=OFPFW_ALL & ~OFPFW_DL_DST, dl_dst=bytes(mac))

    def _zeroed(self) -> Match10:
        """Copy with wildcarded fields forced to zero (the wire invariant)."""
        w = self.wildcards
        nw_src_wild = ((w & OFPFW_NW_SRC_MASK) >> OFPFW_NW_SRC_SHIFT) >= 32
        nw_dst_wild = ((w & OFPFW_NW_DST_MASK) >> OFPFW_NW_DST_SHIFT) >= 32
        return Match10(
            wildcards=w,
            in_port=0 if w & OFPFW_IN_PORT else self.in_port,
            dl_src=b"\x00" * 6 if w & OFPFW_DL_SRC else self.dl_src,
            dl_dst=b"\x00" * 6 if w & OFPFW_DL_DST else self.dl_dst,
            dl_vlan=0 if w & OFPFW_DL_VLAN else self.dl_vlan,
            dl_vlan_pcp=0 if w & OFPFW_DL_VLAN_PCP else self.dl_vlan_pcp,
            dl_type=0 if w & OFPFW_DL_TYPE else self.dl_type,
            nw_tos=0 if w & OFPFW_NW_TOS else self.nw_tos,
            nw_proto=0 if w & OFPFW_NW_PROTO else self.nw_proto,
            nw_src=0 if nw_src_wild else self.nw_src,
            nw_dst=0 if nw_dst_wild else self.nw_dst,
            tp_src=0 if w & OFPFW_TP_SRC else self.tp_src,
            tp_dst=0 if w & OFPFW_TP_DST else self.tp_dst,
        )

    def pack(self) -> bytes:
        m = self._zeroed()
        return _MATCH.pack(
            m.wildcards, m.in_port, m.dl_src, m.dl_dst, m.dl_vlan, m.dl_vlan_pcp,
            m.dl_type, m.nw_tos, m.nw_proto, m.nw_src, m.nw_dst, m.tp_src, m.tp_dst,
        )

    @classmethod
    def unpack(cls, buf: bytes, offset: int) -> Match10:
        fields = _MATCH.unpack_from(buf, offset)
        return cls(*fields)


@dataclass(frozen=True)
class OutputAction:
    """OFPAT_OUTPUT: forward out a port (or FLOOD/CONTROLLER/... pseudo-port)."""

    port: int
    max_len: int = 0

    def pack(self) -> bytes:
        return _ACTION_OUTPUT.pack(0, 8, self.port, self.max_len)


@dataclass(frozen=True)
class RawAction:
    """Any other action, preserved verbatim (body excludes the 4-byte header)."""

    action_type: int
    body: bytes

    def pack(self) -> bytes:
        return _ACTION_HEADER.pack(self.action_type, 4 + len(self.body)) + self.body


Action = OutputAction | RawAction


def encode_actions(actions: tuple | list) -> bytes:
    return b"".join(a.pack() for a in actions)


def decode_actions(buf: bytes, offset: int, length: int) -> tuple[Action, ...]:
    end = offset + length
    if end > len(buf):
        raise OfDecodeError("actions extend past buffer", offset)
    out: list[Action] = []
    while offset < end:
        if end - offset < 4:
            raise OfDecodeError("truncated action header", offset)
        a_type, a_len = _ACTION_HEADER.unpack_from(buf, offset)
        if a_len < 4 or offset + a_len > end:
            raise OfDecodeError(f"bad action length {a_len}", offset + 2)
        if a_type == 0 and a_len == 8:
            _, _, port, max_len = _ACTION_OUTPUT.unpack_from(buf, offset)
            out.append(OutputAction(port, max_len))
        else:
            out.append(RawAction(a_type, buf[offset + 4 : offset + a_len]))
        offset += a_len
    return tuple(out)


# --- message variants --------------------------------------------------------


@dataclass(frozen=True)
class Hello:
    xid: int = 0
    data: bytes = b""


@dataclass(frozen=True)
class EchoRequest:
    xid: int = 0
    data: bytes = b""


@dataclass(frozen=True)
class EchoReply:
    xid: int = 0
    data: bytes = b""


@dataclass(frozen=True)
class FeaturesRequest:
    xid: int = 0


@dataclass(frozen=True)
class FeaturesReply:
    xid: int = 0
    datapath_id: int = 0
    n_buffers: int = 0
    n_tables: int = 1
    capabilities: int = 0
    actions: int = 0
    ports: tuple[PortDesc, ...] = ()


@dataclass(frozen=True)
class PacketIn:
    xid: int = 0
    buffer_id: int = NO_BUFFER
    total_len: int = 0
    in_port: int = 0
    reason: int = OFPR_NO_MATCH
    frame: bytes = b""


@dataclass(frozen=True)
class PacketOut:
    xid: int = 0
    buffer_id: int = NO_BUFFER
    in_port: int = OFPP_NONE
    actions: tuple[Action, ...] = ()
    frame: bytes = b""


@dataclass(frozen=True)
class FlowMod:
    xid: int = 0
    match: Match10 = field(default_factory=Match10)
    cookie: int = 0
    command: int = OFPFC_ADD
    idle_timeout: int = 0
    hard_timeout: int = 0
    priority: int = 0
    buffer_id: int = NO_BUFFER
    out_port: int = OFPP_NONE
    flags: int = 0
    actions: tuple[Action, ...] = ()


@dataclass(frozen=True)
class PortStatus:
    xid: int = 0
    reason: int = 0
    port: PortDesc = field(default_factory=lambda: PortDesc(0))


@dataclass(frozen=True)
class Opaque:
    """A well-formed message of a type this codec does not interpret."""

    msg_type: int
    xid: int = 0
    body: bytes = b""


OfMessage = (
    Hello | EchoRequest | EchoReply | FeaturesRequest | FeaturesReply
    | PacketIn | PacketOut | FlowMod | PortStatus | Opaque
)


def msg_type_of(msg: OfMessage) -> int:
    if isinstance(msg, Hello):
        return OfType.HELLO
    if isinstance(msg, EchoRequest):
        return OfType.ECHO_REQUEST
    if isinstance(msg, EchoReply):
        return OfType.ECHO_REPLY
    if isinstance(msg, FeaturesRequest):
        return OfType.FEATURES_REQUEST
    if isinstance(msg, FeaturesReply):
        return OfType.FEATURES_REPLY
    if isinstance(msg, PacketIn):
        return OfType.PACKET_IN
    if isinstance(msg, PacketOut):
        return OfType.PACKET_OUT
    if isinstance(msg, FlowMod):
        return OfType.FLOW_MOD
    if isinstance(msg, PortStatus):
        return OfType.PORT_STATUS
    if isinstance(msg, Opaque):
        return msg.msg_type
    raise OfEncodeError(f"not an OpenFlow message: {msg!r}")


def encode(msg: OfMessage) -> bytes:
    """Serialize to OpenFlow 1.0 wire format; the length field is recomputed."""
    if isinstance(msg, (Hello, EchoRequest, EchoReply)):
        body = msg.data
    elif isinstance(msg, FeaturesRequest):
        body = b""
    elif isinstance(msg, FeaturesReply):
        body = _FEATURES_FIXED.pack(
            msg.datapath_id, msg.n_buffers, msg.n_tables, msg.capabilities, msg.actions
        ) + b"".join(p.pack() for p in msg.ports)
    elif isinstance(msg, PacketIn):
        if len(msg.frame) > OFP_MAX_FRAME:
            raise OfEncodeError(f"frame too large: {len(msg.frame)}")
        body = _PACKET_IN_FIXED.pack(msg.buffer_id, msg.total_len, msg.in_port, msg.reason) + msg.frame
    elif isinstance(msg, PacketOut):
        if len(msg.frame) > OFP_MAX_FRAME:
            raise OfEncodeError(f"frame too large: {len(msg.frame)}")
        acts = encode_actions(msg.actions)
        body = _PACKET_OUT_FIXED.pack(msg.buffer_id, msg.in_port, len(acts)) + acts + msg.frame
    elif isinstance(msg, FlowMod):
        body = (
            msg.match.pack()
            + _FLOW_MOD_FIXED.pack(
                msg.cookie, msg.command, msg.idle_timeout, msg.hard_timeout,
                msg.priority, msg.buffer_id, msg.out_port, msg.flags,
            )
            + encode_actions(msg.actions)
        )
    elif isinstance(msg, PortStatus):
        body = _PORT_STATUS_FIXED.pack(msg.reason) + msg.port.pack()
    elif isinstance(msg, Opaque):
        body = msg.body
    else:
        raise OfEncodeError(f"not an OpenFlow message: {msg!r}")

    length = OFP_HEADER_LEN + len(body)
    if length > OFP_MAX_LEN:
        raise OfEncodeError(f"message exceeds 65535 bytes: {length}")
    return _HEADER.pack(OFP_VERSION, msg_type_of(msg), length, msg.xid) + body


def decode(buf: bytes) -> OfMessage:
    """Parse exactly one OpenFlow 1.0 message from ``buf``."""
    if len(buf) < OFP_HEADER_LEN:
        raise OfDecodeError(f"short buffer: {len(buf)} < {OFP_HEADER_LEN}", 0)
    version, msg_type, length, xid = _HEADER.unpack_from(buf, 0)
    if version != OFP_VERSION:
        raise OfDecodeError(f"unsupported version 0x{version:02X}", 0)
    if length < OFP_HEADER_LEN:
        raise OfDecodeError(f"header length {length} below minimum", 2)
    if length != len(buf):
        raise OfDecodeError(f"length field {length} does not match buffer of {len(buf)}", 2)
    body = buf[OFP_HEADER_LEN:]

    try:
        if msg_type == OfType.HELLO:
            return Hello(xid, body)
        if msg_type == OfType.ECHO_REQUEST:
            return EchoRequest(xid, body)
        if msg_type == OfType.ECHO_REPLY:
            return EchoReply(xid, body)
        if msg_type == OfType.FEATURES_REQUEST:
            if body:
                raise OfDecodeError("features request carries a body", OFP_HEADER_LEN)
            return FeaturesRequest(xid)
        if msg_type == OfType.FEATURES_REPLY:
            if len(body) < _FEATURES_FIXED.size:
                raise OfDecodeError("truncated features reply", OFP_HEADER_LEN)
            dpid, n_buffers, n_tables, caps, acts = _FEATURES_FIXED.unpack_from(body, 0)
            rest = len(body) - _FEATURES_FIXED.size
            if rest % _PHY_PORT.size:
                raise OfDecodeError("port list not a multiple of 48 bytes",
                                    OFP_HEADER_LEN + _FEATURES_FIXED.size)
            ports = tuple(
                PortDesc.unpack(body, _FEATURES_FIXED.size + i * _PHY_PORT.size)
                for i in range(rest // _PHY_PORT.size)
            )
            return FeaturesReply(xid, dpid, n_buffers, n_tables, caps, acts, ports)
        if msg_type == OfType.PACKET_IN:
            if len(body) < _PACKET_IN_FIXED.size:
                raise OfDecodeError("truncated packet-in", OFP_HEADER_LEN)
            buffer_id, total_len, in_port, reason = _PACKET_IN_FIXED.unpack_from(body, 0)
            return PacketIn(xid, buffer_id, total_len, in_port, reason, body[_PACKET_IN_FIXED.size:])
        if msg_type == OfType.PACKET_OUT:
            if len(body) < _PACKET_OUT_FIXED.size:
                raise OfDecodeError("truncated packet-out", OFP_HEADER_LEN)
            buffer_id, in_port, actions_len = _PACKET_OUT_FIXED.unpack_from(body, 0)
            actions = decode_actions(body, _PACKET_OUT_FIXED.size, actions_len)
            return PacketOut(xid, buffer_id, in_port, actions,
                             body[_PACKET_OUT_FIXED.size + actions_len:])
        if msg_type == OfType.FLOW_MOD:
            fixed = _MATCH.size + _FLOW_MOD_FIXED.size
            if len(body) < fixed:
                raise OfDecodeError("truncated flow-mod", OFP_HEADER_LEN)
            match = Match10.unpack(body, 0)
            cookie, command, idle, hard, prio, buffer_id, out_port, flags = \
                _FLOW_MOD_FIXED.unpack_from(body, _MATCH.size)
            actions = decode_actions(body, fixed, len(body) - fixed)
            return FlowMod(xid, match, cookie, command, idle, hard, prio,
                           buffer_id, out_port, flags, actions)
        if msg_type == OfType.PORT_STATUS:
            if len(body) != _PORT_STATUS_FIXED.size + _PHY_PORT.size:
                raise OfDecodeError("port-status body must be 56 bytes", OFP_HEADER_LEN)
            (reason,) = _PORT_STATUS_FIXED.unpack_from(body, 0)
            return PortStatus(xid, reason, PortDesc.unpack(body, _PORT_STATUS_FIXED.size))
    except struct.error as exc:
        raise OfDecodeError(f"malformed body: {exc}", OFP_HEADER_LEN) from exc

    if msg_type > max(OfType):
        raise OfDecodeError(f"unknown message type {msg_type}", 1)
    return Opaque(msg_type, xid, body)


class OfStreamBuffer:
    """Incremental splitter for an OpenFlow byte stream.

    Framing relies only on the header length field, so raw message bytes can
    be relayed verbatim while the caller decides whether to decode them.
    """

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf.extend(data)
        msgs: list[bytes] = []
        while len(self._buf) >= OFP_HEADER_LEN:
            length = int.from_bytes(self._buf[2:4], "big")
            if length < OFP_HEADER_LEN:
                raise OfDecodeError(f"stream length field {length} below minimum", 2)
            if len(self._buf) < length:
                break
            msgs.append(bytes(self._buf[:length]))
            del self._buf[:length]
        return msgs


# --- Ethernet frame classification -------------------------------------------


class FrameClassifyError(ValueError):
    """Frame too short to carry an Ethernet header."""


@dataclass(frozen=True)
class FrameClass:
    """Header attributes a packet-in topic is derived from."""

    eth_src: bytes
    eth_dst: bytes
    ethertype: int
    ip_proto: int | None = None


def classify_frame(frame: bytes) -> FrameClass:
    """Extract MACs and ethertype; descend into the IPv4 protocol field."""
    if len(frame) < 14:
        raise FrameClassifyError(f"frame too short for Ethernet: {len(frame)} bytes")
    eth_dst = frame[0:6]
    eth_src = frame[6:12]
    ethertype = int.from_bytes(frame[12:14], "big")
    ip_proto = None
    if ethertype == ETH_IPV4 and len(frame) >= 14 + 20:
        version = frame[14] >> 4
        ihl = frame[14] & 0x0F
        if version == 4 and ihl >= 5 and len(frame) >= 14 + ihl * 4:
            ip_proto = frame[23]
    return FrameClass(eth_src, eth_dst, ethertype, ip_proto)


def ethernet_frame(dst: bytes, src: bytes, ethertype: int, payload: bytes) -> bytes:
    return bytes(dst) + bytes(src) + ethertype.to_bytes(2, "big") + payload


def mac_to_bytes(text: str) -> bytes:
    parts = text.split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC address {text!r}")
    return bytes(int(p, 16) for p in parts)


def bytes_to_mac(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)


# --- LLDP for link discovery --------------------------------------------------

_LLDP_TTL_SECONDS = 120
_LLDP_SUBTYPE_LOCAL = 7  # "locally assigned" chassis/port id subtype


class LldpNotOurs(ValueError):
    """An LLDP frame this artifact did not emit; ignore it."""


def _tlv(tlv_type: int, value: bytes) -> bytes:
    return ((tlv_type << 9) | len(value)).to_bytes(2, "big") + value


def build_lldp(chassis_dpid: int, port_no: int) -> bytes:
    """An LLDP frame advertising (switch, port); source MAC derived from the dpid."""
    dpid8 = chassis_dpid.to_bytes(8, "big")
    src = bytes([0x02]) + dpid8[3:8]  # locally administered unicast
    payload = (
        _tlv(1, bytes([_LLDP_SUBTYPE_LOCAL]) + dpid8)
        + _tlv(2, bytes([_LLDP_SUBTYPE_LOCAL]) + port_no.to_bytes(2, "big"))
        + _tlv(3, _LLDP_TTL_SECONDS.to_bytes(2, "big"))
        + _tlv(0, b"")
    )
    return ethernet_frame(LLDP_DST_MAC, src, ETH_LLDP, payload)


def decode_lldp(frame: bytes) -> tuple[int, int]:
    """Inverse of :func:`build_lldp`; (chassis_dpid, port_no).

    Raises ``LldpNotOurs`` for any 0x88CC frame whose TLV layout differs from
    what this artifact emits, and ``ValueError`` for non-LLDP input.
    """
    fc = classify_frame(frame)
    if fc.ethertype != ETH_LLDP:
        raise ValueError(f"not an LLDP frame: ethertype 0x{fc.ethertype:04X}")
    tlvs = []
    offset = 14
    while offset + 2 <= len(frame):
        typelen = int.from_bytes(frame[offset : offset + 2], "big")
        tlv_type, tlv_len = typelen >> 9, typelen & 0x1FF
        if tlv_type == 0:
            break
        if offset + 2 + tlv_len > len(frame):
            raise LldpNotOurs("truncated TLV")
        tlvs.append((tlv_type, frame[offset + 2 : offset + 2 + tlv_len]))
        offset += 2 + tlv_len
    if len(tlvs) < 2 or tlvs[0][0] != 1 or tlvs[1][0] != 2:
        raise LldpNotOurs("unexpected TLV sequence")
    chassis, port = tlvs[0][1], tlvs[1][1]
    if len(chassis) != 9 or chassis[0] != _LLDP_SUBTYPE_LOCAL:
        raise LldpNotOurs("unknown chassis-id subtype or length")
    if len(port) != 3 or port[0] != _LLDP_SUBTYPE_LOCAL:
        raise LldpNotOurs("unknown port-id subtype or length")
    return int.from_bytes(chassis[1:], "big"), int.from_bytes(port[1:], "big")
