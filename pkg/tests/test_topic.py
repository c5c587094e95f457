"""Topic encoding and wildcard-prefix matching tests.

The matcher is checked against ``oracle_matches``, a deliberately naive
per-byte comparison that never touches the packed mask representation.
"""

from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, strategies as st

from zsdn import topic as tp
from zsdn.topic import SubscriptionPattern, TopicError, matches, pattern_from_text


def oracle_matches(pattern_bytes: bytes, wildcard_flags: list[bool], topic: bytes) -> bool:
    """Independent reference: plain per-byte walk over unpacked wildcard flags."""
    if len(pattern_bytes) > len(topic):
        return False
    for i in range(len(pattern_bytes)):
        if wildcard_flags[i]:
            continue
        if pattern_bytes[i] != topic[i]:
            return False
    return True


def make_pattern(pattern_bytes: bytes, wildcard_flags: list[bool]) -> SubscriptionPattern:
    idx = [i for i, w in enumerate(wildcard_flags) if w]
    return SubscriptionPattern.with_wildcards(pattern_bytes, idx)


class TestEncoding:
    def test_packet_in_ipv4_tcp(self):
        t = tp.encode_packet_in_topic(0x00, 0x0800, 0x06)
        assert t == bytes.fromhex("020000000A00080006")

    def test_packet_in_arp(self):
        t = tp.encode_packet_in_topic(0x00, 0x0806, None)
        assert t == bytes.fromhex("020000000A000806")

    def test_packet_in_udp_lb3(self):
        t = tp.encode_packet_in_topic(0x03, 0x0800, 0x11)
        assert t == bytes.fromhex("020000000A03080011")

    def test_packet_in_ip_proto_mismatch(self):
        with pytest.raises(TopicError):
            tp.encode_packet_in_topic(0x00, 0x0806, 0x06)
        with pytest.raises(TopicError):
            tp.encode_packet_in_topic(0x00, 0x0800, None)

    def test_to_switch_flow_mod(self):
        t = tp.encode_to_switch_topic(0x0000000000000001, 0x0E)
        assert t == bytes.fromhex("0100000000000000000001000E")

    def test_to_switch_packet_out(self):
        t = tp.encode_to_switch_topic(0x0000000000000001, 0x0D)
        assert t == bytes.fromhex("0100000000000000000001000D")

    def test_to_switch_extreme_id(self):
        t = tp.encode_to_switch_topic(0xFFFFFFFFFFFFFFFF, 0x0D)
        assert t == bytes.fromhex("010000FFFFFFFFFFFFFFFF000D")

    def test_port_status(self):
        assert tp.encode_port_status_topic() == bytes.fromhex("020000000C")

    def test_lengths_are_constant_per_shape(self):
        assert len(tp.encode_to_switch_topic(7, 0x0D)) == 13
        assert len(tp.encode_packet_in_topic(0, 0x0806, None)) == 8
        assert len(tp.encode_packet_in_topic(0, 0x88CC, None)) == 8
        assert len(tp.encode_packet_in_topic(0, 0x0800, 0x11)) == 9
        assert len(tp.encode_port_status_topic()) == 5

    def test_unlisted_ethertype_still_encoded(self):
        t = tp.encode_packet_in_topic(0x00, 0x86DD, None)
        assert t[-2:] == b"\x86\xdd"


class TestMatching:
    def test_literal_prefix(self):
        p = SubscriptionPattern.literal(bytes.fromhex("020000000A"))
        assert matches(p, bytes.fromhex("020000000A00080006"))

    def test_wildcard_absorbs_lb_byte(self):
        p = SubscriptionPattern(bytes.fromhex("020000000A00080 6".replace(" ", "")), bytes([0xFB]))
        assert p.is_wildcard(5)
        assert matches(p, bytes.fromhex("020000000A070806"))

    def test_pattern_longer_than_topic(self):
        p = SubscriptionPattern.literal(bytes.fromhex("020000000A00"))
        assert not matches(p, bytes.fromhex("020000000C"))

    def test_direction_mismatch_on_port_status(self):
        good = SubscriptionPattern.literal(bytes.fromhex("020000"))
        bad = SubscriptionPattern.literal(bytes.fromhex("010000"))
        t = tp.encode_port_status_topic()
        assert matches(good, t)
        assert not matches(bad, t)

    def test_exhaustive_oracle_equivalence_small(self):
        """All patterns/topics of length <= 3 over {0x00, 0x01}, all masks."""
        alphabet = (0x00, 0x01)
        topics = [
            bytes(c)
            for n in (1, 2, 3)
            for c in itertools.product(alphabet, repeat=n)
        ]
        cases = 0
        for plen in (1, 2, 3):
            for pbytes in itertools.product(alphabet, repeat=plen):
                for flags in itertools.product((False, True), repeat=plen):
                    pat = make_pattern(bytes(pbytes), list(flags))
                    for t in topics:
                        assert matches(pat, t) == oracle_matches(bytes(pbytes), list(flags), t)
                        cases += 1
        assert cases == (2 + 4 + 8) * (4 + 16 + 64)

    def test_randomized_oracle_equivalence(self):
        rng = random.Random(0xC0FFEE)
        for _ in range(10_000):
            plen = rng.randint(1, 16)
            tlen = rng.randint(0, 16)
            pbytes = bytes(rng.randrange(256) for _ in range(plen))
            flags = [rng.random() < 0.3 for _ in range(plen)]
            # Bias half the topics toward near-matches so both outcomes occur.
            if tlen >= plen and rng.random() < 0.5:
                t = bytearray(pbytes) + bytearray(rng.randrange(256) for _ in range(tlen - plen))
                if rng.random() < 0.5:
                    t[rng.randrange(plen)] ^= 0xFF
                t = bytes(t)
            else:
                t = bytes(rng.randrange(256) for _ in range(tlen))
            pat = make_pattern(pbytes, flags)
            assert matches(pat, t) == oracle_matches(pbytes, flags, t)


@st.composite
def patterns(draw):
    data = draw(st.binary(min_size=1, max_size=12))
    flags = draw(st.lists(st.booleans(), min_size=len(data), max_size=len(data)))
    return data, flags


class TestProperties:
    @given(patterns(), st.binary(max_size=16), st.binary(max_size=8))
    def test_prefix_monotonicity(self, pat, t, suffix):
        data, flags = pat
        p = make_pattern(data, flags)
        if matches(p, t):
            assert matches(p, t + suffix)

    @given(patterns(), st.binary(max_size=16), st.integers(min_value=0, max_value=11))
    def test_wildcard_monotonicity(self, pat, t, idx):
        data, flags = pat
        if idx >= len(data):
            idx = idx % len(data)
        p = make_pattern(data, flags)
        widened_flags = list(flags)
        widened_flags[idx] = True
        widened = make_pattern(data, widened_flags)
        if matches(p, t):
            assert matches(widened, t)

    @given(patterns(), st.binary(max_size=16))
    def test_oracle_agreement(self, pat, t):
        data, flags = pat
        assert matches(make_pattern(data, flags), t) == oracle_matches(data, flags, t)

    @given(patterns(), st.binary(max_size=16))
    def test_determinism(self, pat, t):
        data, flags = pat
        p = make_pattern(data, flags)
        assert matches(p, t) == matches(p, t)


class TestPatternText:
    def test_plain_literal(self):
        p = pattern_from_text("02.0000.00.0A")
        assert p.bytes_ == bytes.fromhex("020000000A")
        assert not any(p.is_wildcard(i) for i in range(5))

    def test_trailing_wildcard(self):
        p = pattern_from_text("02.0000.00.0A.??")
        assert len(p) == 6
        assert p.is_wildcard(5)
        assert not p.is_wildcard(4)

    def test_invalid_hex(self):
        with pytest.raises(TopicError):
            pattern_from_text("02.0000.0G")

    def test_odd_length(self):
        with pytest.raises(TopicError):
            pattern_from_text("02.000")

    def test_round_trip_text(self):
        for text in ("02.0000.00.0A.??", "01.0000.??.FF"):
            rendered = pattern_from_text(text).to_text()
            assert rendered.replace(".", "") == text.replace(".", "").upper()
            assert pattern_from_text(rendered) == pattern_from_text(text)

    def test_mask_excess_bits_rejected(self):
        with pytest.raises(TopicError):
            SubscriptionPattern(b"\x02", bytes([0xC0]))

    def test_wildcard_mask_msb_first(self):
        p = SubscriptionPattern.with_wildcards(bytes(8), [5])
        assert p.mask == bytes([0xFB])
