"""Bus wire format: length-prefixed frames and their body layouts.

Every frame on a bus connection is

    length: u32 big-endian = 1 + len(body)
    frame_type: u8
    body: length - 1 bytes

Body layouts (all integers big-endian):

    REGISTER      u16 controllet_type | u64 instance_id
                  | u16 n_patterns | n x pattern | u16 n_topics | n x topic
    REGISTER_ACK  u8 status (0 ok, 1 id unavailable) | u64 instance_id
    SUBSCRIBE     pattern
    UNSUBSCRIBE   pattern
    PUBLISH       u16 topic_len | topic | payload
    EVENT         u16 topic_len | topic | payload
    REQUEST       u64 target_id | u32 req_id | payload
    REPLY         u32 req_id | u8 status (0 ok, 1 error) | payload
    HEARTBEAT     (empty)
    BYE           (empty)

where ``pattern`` is u16 length | pattern bytes | mask bytes
(ceil(length/8), MSB first, set bit = literal) and ``topic`` is
u16 length | topic bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from zsdn.topic import SubscriptionPattern

MAX_BODY = 16 * 1024 * 1024


class FrameType(IntEnum):
    REGISTER = 0x01
    REGISTER_ACK = 0x02
    SUBSCRIBE = 0x03
    UNSUBSCRIBE = 0x04
    PUBLISH = 0x05
    EVENT = 0x06
    REQUEST = 0x07
    REPLY = 0x08
    HEARTBEAT = 0x09
    BYE = 0x0A


class BusProtocolError(Exception):
    """Wire-level violation; the offending connection must be closed."""


@dataclass(frozen=True)
class BusFrame:
    frame_type: int
    body: bytes = b""


def frame_encode(frame: BusFrame) -> bytes:
    if len(frame.body) > MAX_BODY:
        raise BusProtocolError(f"body of {len(frame.body)} bytes exceeds {MAX_BODY}")
    if frame.frame_type not in FrameType._value2member_map_:
        raise BusProtocolError(f"unknown frame type 0x{frame.frame_type:02X}")
    return (1 + len(frame.body)).to_bytes(4, "big") + bytes([frame.frame_type]) + frame.body


def frame_decode(buf: bytes) -> BusFrame:
    """Exact inverse of frame_encode over a single complete frame."""
    if len(buf) < 5:
        raise BusProtocolError(f"truncated frame: {len(buf)} bytes")
    length = int.from_bytes(buf[:4], "big")
    if length != len(buf) - 4:
        raise BusProtocolError(f"length field {length} does not match body of {len(buf) - 4}")
    frame = BusFrame(buf[4], buf[5:])
    if frame.frame_type not in FrameType._value2member_map_:
        raise BusProtocolError(f"unknown frame type 0x{frame.frame_type:02X}")
    if len(frame.body) > MAX_BODY:
        raise BusProtocolError("oversize frame")
    return frame


class FrameReader:
    """Incremental frame splitter for a byte stream."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[BusFrame]:
        self._buf.extend(data)
        frames: list[BusFrame] = []
        while len(self._buf) >= 4:
            length = int.from_bytes(self._buf[:4], "big")
            if length < 1 or length > 1 + MAX_BODY:
                raise BusProtocolError(f"bad frame length {length}")
            if len(self._buf) < 4 + length:
                break
            frames.append(frame_decode(bytes(self._buf[: 4 + length])))
            del self._buf[: 4 + length]
        return frames


# --- body packers/unpackers ---------------------------------------------------

_REGISTER_FIXED = struct.Struct("!HQ")
_ACK = struct.Struct("!BQ")
_REQUEST_FIXED = struct.Struct("!QI")
_REPLY_FIXED = struct.Struct("!IB")
_LIFECYCLE = struct.Struct("!HQ")


def _need(buf: bytes, offset: int, n: int, what: str) -> None:
    if offset + n > len(buf):
        raise BusProtocolError(f"truncated {what} at offset {offset}")


def pack_pattern(pattern: SubscriptionPattern) -> bytes:
    return len(pattern.bytes_).to_bytes(2, "big") + pattern.bytes_ + pattern.mask


def unpack_pattern(buf: bytes, offset: int) -> tuple[SubscriptionPattern, int]:
    _need(buf, offset, 2, "pattern length")
    n = int.from_bytes(buf[offset : offset + 2], "big")
    offset += 2
    mask_len = (n + 7) // 8
    _need(buf, offset, n + mask_len, "pattern")
    try:
        pattern = SubscriptionPattern(buf[offset : offset + n], buf[offset + n : offset + n + mask_len])
    except ValueError as exc:
        raise BusProtocolError(f"invalid pattern: {exc}") from exc
    return pattern, offset + n + mask_len


def pack_register(
    controllet_type: int,
    instance_id: int,
    to_patterns: tuple[SubscriptionPattern, ...] | list[SubscriptionPattern] = (),
    from_topics: tuple[bytes, ...] | list[bytes] = (),
) -> bytes:
    parts = [_REGISTER_FIXED.pack(controllet_type, instance_id)]
    parts.append(len(to_patterns).to_bytes(2, "big"))
    parts.extend(pack_pattern(p) for p in to_patterns)
    parts.append(len(from_topics).to_bytes(2, "big"))
    parts.extend(len(t).to_bytes(2, "big") + t for t in from_topics)
    return b"".join(parts)


def unpack_register(body: bytes) -> tuple[int, int, tuple[SubscriptionPattern, ...], tuple[bytes, ...]]:
    _need(body, 0, _REGISTER_FIXED.size + 2, "register header")
    controllet_type, instance_id = _REGISTER_FIXED.unpack_from(body, 0)
    offset = _REGISTER_FIXED.size
    n_patterns = int.from_bytes(body[offset : offset + 2], "big")
    offset += 2
    patterns = []
    for _ in range(n_patterns):
        pattern, offset = unpack_pattern(body, offset)
        patterns.append(pattern)
    _need(body, offset, 2, "topic count")
    n_topics = int.from_bytes(body[offset : offset + 2], "big")
    offset += 2
    topics = []
    for _ in range(n_topics):
        _need(body, offset, 2, "topic length")
        n = int.from_bytes(body[offset : offset + 2], "big")
        offset += 2
        _need(body, offset, n, "topic")
        topics.append(body[offset : offset + n])
        offset += n
    if offset != len(body):
        raise BusProtocolError(f"{len(body) - offset} trailing bytes in register body")
    return controllet_type, instance_id, tuple(patterns), tuple(topics)


def pack_register_ack(status: int, instance_id: int) -> bytes:
    return _ACK.pack(status, instance_id)


def unpack_register_ack(body: bytes) -> tuple[int, int]:
    _need(body, 0, _ACK.size, "register ack")
    return _ACK.unpack_from(body, 0)


def pack_publish(topic: bytes, payload: bytes) -> bytes:
    if len(topic) > 0xFFFF:
        raise BusProtocolError("topic too long")
    return len(topic).to_bytes(2, "big") + topic + payload


def unpack_publish(body: bytes) -> tuple[bytes, bytes]:
    _need(body, 0, 2, "topic length")
    n = int.from_bytes(body[:2], "big")
    _need(body, 2, n, "topic")
    return body[2 : 2 + n], body[2 + n :]


# EVENT shares the PUBLISH body layout.
pack_event = pack_publish
unpack_event = unpack_publish


def pack_request(target_id: int, req_id: int, payload: bytes) -> bytes:
    return _REQUEST_FIXED.pack(target_id, req_id) + payload


def unpack_request(body: bytes) -> tuple[int, int, bytes]:
    _need(body, 0, _REQUEST_FIXED.size, "request header")
    target_id, req_id = _REQUEST_FIXED.unpack_from(body, 0)
    return target_id, req_id, body[_REQUEST_FIXED.size :]


def pack_reply(req_id: int, status: int, payload: bytes) -> bytes:
    return _REPLY_FIXED.pack(req_id, status) + payload


def unpack_reply(body: bytes) -> tuple[int, int, bytes]:
    _need(body, 0, _REPLY_FIXED.size, "reply header")
    req_id, status = _REPLY_FIXED.unpack_from(body, 0)
    return req_id, status, body[_REPLY_FIXED.size :]


def pack_lifecycle_payload(controllet_type: int, instance_id: int) -> bytes:
    return _LIFECYCLE.pack(controllet_type, instance_id)


def unpack_lifecycle_payload(payload: bytes) -> tuple[int, int]:
    _need(payload, 0, _LIFECYCLE.size, "lifecycle payload")
    return _LIFECYCLE.unpack_from(payload, 0)
