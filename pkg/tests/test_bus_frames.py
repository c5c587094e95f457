"""Bus frame layer: layout vectors, round trips, malformed input."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zsdn.bus import frames as fr
from zsdn.bus.frames import BusFrame, BusProtocolError, FrameType
from zsdn.topic import SubscriptionPattern


class TestWireVectors:
    def test_heartbeat(self):
        assert fr.frame_encode(BusFrame(FrameType.HEARTBEAT)) == bytes.fromhex("0000000109")

    def test_publish_one_byte_topic(self):
        body = fr.pack_publish(b"\x02", b"\xab")
        wire = fr.frame_encode(BusFrame(FrameType.PUBLISH, body))
        assert wire == bytes.fromhex("00000005 05 0001 02 ab".replace(" ", ""))

    def test_bye(self):
        assert fr.frame_encode(BusFrame(FrameType.BYE)) == bytes.fromhex("000000010a")


class TestFrameCodec:
    def test_round_trip_all_types(self):
        for ftype in FrameType:
            f = BusFrame(ftype, b"\x00\x01\x02")
            assert fr.frame_decode(fr.frame_encode(f)) == f

    def test_oversize_body_rejected(self):
        with pytest.raises(BusProtocolError):
            fr.frame_encode(BusFrame(FrameType.PUBLISH, b"\x00" * (fr.MAX_BODY + 1)))

    def test_unknown_type_rejected_both_ways(self):
        with pytest.raises(BusProtocolError):
            fr.frame_encode(BusFrame(0x7F))
        with pytest.raises(BusProtocolError):
            fr.frame_decode(bytes.fromhex("000000017f"))

    def test_truncation_rejected(self):
        wire = fr.frame_encode(BusFrame(FrameType.PUBLISH, fr.pack_publish(b"\x02", b"")))
        with pytest.raises(BusProtocolError):
            fr.frame_decode(wire[:-1])

    @settings(max_examples=300)
    @given(st.sampled_from(list(FrameType)), st.binary(max_size=200))
    def test_round_trip_randomized(self, ftype, body):
        f = BusFrame(ftype, body)
        assert fr.frame_decode(fr.frame_encode(f)) == f


class TestFrameReader:
    def test_reassembles_across_arbitrary_splits(self):
        frames = [
            BusFrame(FrameType.HEARTBEAT),
            BusFrame(FrameType.PUBLISH, fr.pack_publish(b"\x02\x00", b"payload")),
            BusFrame(FrameType.BYE),
        ]
        stream = b"".join(fr.frame_encode(f) for f in frames)
        for chunk in (1, 2, 7, len(stream)):
            reader = fr.FrameReader()
            got = []
            for i in range(0, len(stream), chunk):
                got.extend(reader.feed(stream[i : i + chunk]))
            assert got == frames

    def test_zero_length_frame_rejected(self):
        with pytest.raises(BusProtocolError):
            fr.FrameReader().feed(b"\x00\x00\x00\x00\x09")

    def test_absurd_length_rejected_before_buffering(self):
        with pytest.raises(BusProtocolError):
            fr.FrameReader().feed(b"\xff\xff\xff\xff")


class TestBodies:
    def test_register_round_trip(self):
        patterns = (
            SubscriptionPattern.literal(bytes.fromhex("010000000000000000000500")),
            SubscriptionPattern.with_wildcards(bytes.fromhex("020000000a00"), [5]),
        )
        topics = (bytes.fromhex("020000000a"), b"\x02")
        body = fr.pack_register(0x0001, 0xDEADBEEF, patterns, topics)
        assert fr.unpack_register(body) == (0x0001, 0xDEADBEEF, patterns, topics)

    def test_register_no_patterns(self):
        body = fr.pack_register(0xFFFF, 1)
        assert fr.unpack_register(body) == (0xFFFF, 1, (), ())

    def test_register_trailing_garbage_rejected(self):
        with pytest.raises(BusProtocolError):
            fr.unpack_register(fr.pack_register(1, 2) + b"\x00")

    def test_register_truncated_pattern_rejected(self):
        body = fr.pack_register(1, 2, (SubscriptionPattern.literal(b"\x02\x00"),))
        with pytest.raises(BusProtocolError):
            fr.unpack_register(body[:-3])

    def test_pattern_mask_survives(self):
        p = SubscriptionPattern.with_wildcards(bytes(9), [0, 8])
        decoded, end = fr.unpack_pattern(fr.pack_pattern(p), 0)
        assert decoded == p
        assert decoded.is_wildcard(0) and decoded.is_wildcard(8) and not decoded.is_wildcard(3)
        assert end == 2 + 9 + 2

    def test_register_ack(self):
        assert fr.unpack_register_ack(fr.pack_register_ack(1, 2**64 - 1)) == (1, 2**64 - 1)

    def test_publish_empty_payload(self):
        assert fr.unpack_publish(fr.pack_publish(b"\x02\x00\x00", b"")) == (b"\x02\x00\x00", b"")

    def test_request_reply(self):
        assert fr.unpack_request(fr.pack_request(0xAB, 7, b"hi")) == (0xAB, 7, b"hi")
        assert fr.unpack_reply(fr.pack_reply(7, 1, b"nope")) == (7, 1, b"nope")

    def test_lifecycle_payload(self):
        payload = fr.pack_lifecycle_payload(0x0000, 0x0102030405060708)
        assert payload == bytes.fromhex("0000 0102030405060708".replace(" ", ""))
        assert fr.unpack_lifecycle_payload(payload) == (0x0000, 0x0102030405060708)

    @settings(max_examples=200)
    @given(
        st.integers(0, 0xFFFF),
        st.integers(0, 2**64 - 1),
        st.lists(st.binary(min_size=1, max_size=12), max_size=4),
    )
    def test_register_round_trip_randomized(self, ctype, iid, raw_topics):
        patterns = tuple(SubscriptionPattern.literal(t) for t in raw_topics)
        body = fr.pack_register(ctype, iid, patterns, tuple(raw_topics))
        assert fr.unpack_register(body) == (ctype, iid, patterns, tuple(raw_topics))
