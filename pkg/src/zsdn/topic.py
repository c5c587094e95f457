"""Hierarchical binary event topics and wildcard subscription matching.

Topics are short byte strings assembled from fixed-width layers, most
significant layer first:

    DIRECTION(1) CONTROLLET_TYPE(2) [SWITCH_INSTANCE(8)] OPENFLOW(1)
    OF_MSG_TYPE(1) [LB_GROUP(1) ETHERTYPE(2) [IP_PROTO(1)]]

The SWITCH_INSTANCE layer appears only on the TO branch (messages addressed
to one switch); the LB_GROUP/ETHERTYPE/IP_PROTO layers only under PACKET_IN
on the FROM branch.  Subscriptions are byte patterns with a per-byte
wildcard mask and prefix semantics: a pattern matches every topic it is a
(wildcard-aware) prefix of, so shorter patterns subscribe to whole subtrees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Direction layer
TO = 0x01
FROM = 0x02

# Controllet type codes (16-bit)
SWITCH_ADAPTER = 0x0000
LEARNING_SWITCH = 0x0001
TOPOLOGY = 0x0002
KERNEL = 0xFFFF  # system namespace for lifecycle events

# Protocol layer under a SwitchAdapter
OPENFLOW = 0x00

# OpenFlow message-type layer values used in topics
PACKET_IN = 0x0A
PORT_STATUS = 0x0C
PACKET_OUT = 0x0D
FLOW_MOD = 0x0E

DEFAULT_LB_GROUP = 0x00

# Ethertypes that commonly appear in the ETHERTYPE layer
ETH_IPV4 = 0x0800
ETH_ARP = 0x0806
ETH_LLDP = 0x88CC

# IPv4 protocol numbers for the IP_PROTO layer
IP_PROTO_TCP = 0x06
IP_PROTO_UDP = 0x11

MAX_TOPIC_LEN = 64

Topic = bytes


class TopicError(ValueError):
    """Invalid topic layer combination or malformed pattern text."""


def _check_byte(value: int, name: str) -> int:
    if not 0 <= value <= 0xFF:
        raise TopicError(f"{name} out of range: {value!r}")
    return value


def encode_packet_in_topic(lb_group: int, ethertype: int, ip_proto: int | None = None) -> Topic:
    """Topic for a PACKET_IN event published by a switch adapter.

    The IP_PROTO layer exists only under the IPv4 ethertype, so ``ip_proto``
    must be given exactly when ``ethertype == 0x0800``.
    """
    _check_byte(lb_group, "lb_group")
    if not 0 <= ethertype <= 0xFFFF:
        raise TopicError(f"ethertype out of range: {ethertype!r}")
    if (ethertype == ETH_IPV4) != (ip_proto is not None):
        raise TopicError(
            f"ip_proto must be present iff ethertype is IPv4 "
            f"(ethertype=0x{ethertype:04X}, ip_proto={ip_proto!r})"
        )
    topic = bytes([FROM, 0x00, 0x00, OPENFLOW, PACKET_IN, lb_group]) + ethertype.to_bytes(2, "big")
    if ip_proto is not None:
        topic += bytes([_check_byte(ip_proto, "ip_proto")])
    return topic


def encode_to_switch_topic(switch_instance: int, of_msg_type: int) -> Topic:
    """Topic addressing one OpenFlow message type to one switch (13 bytes)."""
    if not 0 <= switch_instance <= 0xFFFFFFFFFFFFFFFF:
        raise TopicError(f"switch_instance out of range: {switch_instance!r}")
    _check_byte(of_msg_type, "of_msg_type")
    return (
        bytes([TO, 0x00, 0x00])
        + switch_instance.to_bytes(8, "big")
        + bytes([OPENFLOW, of_msg_type])
    )


def encode_port_status_topic() -> Topic:
    """Topic for PORT_STATUS events (5 bytes, no per-switch layer)."""
    return bytes([FROM, 0x00, 0x00, OPENFLOW, PORT_STATUS])


def encode_lifecycle_topic(code: int) -> Topic:
    """System topic for controllet lifecycle events (JOIN=0x01, LEAVE=0x02)."""
    return bytes([FROM, 0xFF, 0xFF, _check_byte(code, "code")])


@dataclass(frozen=True)
class SubscriptionPattern:
    """A topic-shaped byte pattern with a per-byte wildcard mask.

    ``mask`` holds one bit per pattern byte, MSB first within each mask
    byte; a set bit means the byte is literal, a clear bit means wildcard.
    Matching is prefix-based: the pattern only constrains the first
    ``len(bytes_)`` topic bytes.
    """

    bytes_: bytes
    mask: bytes = field(default=b"")

    def __post_init__(self) -> None:
        if not 1 <= len(self.bytes_) <= MAX_TOPIC_LEN:
            raise TopicError(f"pattern length must be 1..{MAX_TOPIC_LEN}, got {len(self.bytes_)}")
        if not self.mask:
            object.__setattr__(self, "mask", _all_literal_mask(len(self.bytes_)))
        if len(self.mask) * 8 < len(self.bytes_):
            raise TopicError("mask shorter than pattern")
        for i in range(len(self.bytes_), len(self.mask) * 8):
            if _mask_bit(self.mask, i):
                raise TopicError(f"mask bit {i} set beyond pattern length")

    @classmethod
    def literal(cls, bytes_: bytes) -> SubscriptionPattern:
        """All-literal pattern: a plain byte-prefix filter."""
        return cls(bytes_)

    @classmethod
    def with_wildcards(cls, bytes_: bytes, wildcard_indexes: tuple[int, ...] | list[int]) -> SubscriptionPattern:
        mask = bytearray(_all_literal_mask(len(bytes_)))
        for i in wildcard_indexes:
            if not 0 <= i < len(bytes_):
                raise TopicError(f"wildcard index {i} out of range")
            mask[i >> 3] &= ~(0x80 >> (i & 7))
        return cls(bytes_, bytes(mask))

    def is_wildcard(self, index: int) -> bool:
        return not _mask_bit(self.mask, index)

    def to_text(self) -> str:
        return ".".join("??" if self.is_wildcard(i) else f"{b:02X}" for i, b in enumerate(self.bytes_))

    def __len__(self) -> int:
        return len(self.bytes_)


def _all_literal_mask(nbytes: int) -> bytes:
    mask = bytearray((nbytes + 7) // 8)
    for i in range(nbytes):
        mask[i >> 3] |= 0x80 >> (i & 7)
    return bytes(mask)


def _mask_bit(mask: bytes, index: int) -> int:
    return (mask[index >> 3] >> (7 - (index & 7))) & 1


def matches(pattern: SubscriptionPattern, topic: Topic) -> bool:
    """True iff the pattern is a wildcard-aware byte prefix of the topic."""
    p = pattern.bytes_
    if len(p) > len(topic):
        return False
    mask = pattern.mask
    for i, pb in enumerate(p):
        if (mask[i >> 3] >> (7 - (i & 7))) & 1 and pb != topic[i]:
            return False
    return True


def pattern_from_text(text: str) -> SubscriptionPattern:
    """Parse the textual pattern syntax: hex pairs or ``??`` per byte.

    Dots are cosmetic separators, e.g. ``02.0000.00.0A.??``.
    """
    compact = text.replace(".", "").strip()
    if not compact:
        raise TopicError("empty pattern")
    if len(compact) % 2 != 0:
        raise TopicError(f"odd-length pattern text: {text!r}")
    values = bytearray()
    wildcards = []
    for i in range(0, len(compact), 2):
        token = compact[i : i + 2]
        if token == "??":
            values.append(0x00)
            wildcards.append(i // 2)
        else:
            try:
                values.append(int(token, 16))
            except ValueError:
                raise TopicError(f"invalid hex byte {token!r} in pattern {text!r}") from None
    return SubscriptionPattern.with_wildcards(bytes(values), wildcards)


def topic_to_text(topic: Topic) -> str:
    return ".".join(f"{b:02X}" for b in topic)
