"""Broker core: routing, registration, request forwarding, liveness, determinism.

The core is a pure state machine, so everything here runs synchronously with
an explicit clock — no sockets, no sleeps.
"""

import random

import pytest

from zsdn import topic as tp
from zsdn.bus import frames as fr
from zsdn.bus.broker import BROKER_ID, JOIN, LEAVE, OP_LIST, BrokerCore
from zsdn.bus.frames import BusFrame, BusProtocolError, FrameType
from zsdn.topic import SubscriptionPattern


def register_frame(ctype, iid, patterns=(), topics=()):
    return BusFrame(FrameType.REGISTER, fr.pack_register(ctype, iid, patterns, topics))


def publish_frame(topic, payload=b""):
    return BusFrame(FrameType.PUBLISH, fr.pack_publish(topic, payload))


def make_core_with(*clients):
    """clients: (conn_id, ctype, iid, patterns). Returns the registered core."""
    core = BrokerCore()
    for conn_id, ctype, iid, patterns in clients:
        out = core.handle_frame(conn_id, register_frame(ctype, iid, patterns), now=0.0)
        status, _ = fr.unpack_register_ack(out[0][1].body)
        assert status == 0
    return core


class TestRouteOracle:
    def oracle(self, subs, topic):
        """Independently filter every connection through matches()."""
        return {c for c, patterns in subs.items() if any(tp.matches(p, topic) for p in patterns)}

    def test_single_match(self):
        core = make_core_with(
            (1, 1, 0xA, (SubscriptionPattern.literal(bytes.fromhex("020000000a")),)),
            (2, 1, 0xB, (SubscriptionPattern.literal(bytes.fromhex("020000000c")),)),
        )
        assert core.route(bytes.fromhex("020000000a00080 6".replace(" ", ""))) == [1]

    def test_fan_out(self):
        core = make_core_with(
            (1, 1, 0xA, (SubscriptionPattern.literal(b"\x02"),)),
            (2, 1, 0xB, (SubscriptionPattern.literal(b"\x02"),)),
        )
        assert core.route(bytes.fromhex("020000000c")) == [1, 2]

    def test_random_sets_agree_with_oracle(self):
        rng = random.Random(2024)
        for _ in range(1000):
            n_conns = rng.randrange(1, 6)
            subs = {}
            clients = []
            for conn_id in range(1, n_conns + 1):
                patterns = []
                for _ in range(rng.randrange(0, 4)):
                    length = rng.randrange(1, 6)
                    data = bytes(rng.randrange(4) for _ in range(length))
                    wilds = [i for i in range(length) if rng.random() < 0.3]
                    patterns.append(SubscriptionPattern.with_wildcards(data, wilds))
                subs[conn_id] = patterns
                clients.append((conn_id, 1, conn_id, tuple(patterns)))
            core = make_core_with(*clients)
            topic = bytes(rng.randrange(4) for _ in range(rng.randrange(1, 8)))
            assert set(core.route(topic)) == self.oracle(subs, topic)
            assert core.route(topic) == sorted(core.route(topic))


class TestRegistration:
    def test_register_acks_and_installs_patterns(self):
        core = BrokerCore()
        pattern = SubscriptionPattern.literal(b"\x02")
        out = core.handle_frame(1, register_frame(0x0001, 42, (pattern,)), now=0.0)
        assert out == [(1, BusFrame(FrameType.REGISTER_ACK, fr.pack_register_ack(0, 42)))]
        assert core.route(b"\x02\x00") == [1]

    def test_duplicate_instance_id_refused(self):
        core = make_core_with((1, 1, 42, ()))
        out = core.handle_frame(2, register_frame(1, 42), now=0.0)
        assert out == [(2, BusFrame(FrameType.REGISTER_ACK, fr.pack_register_ack(1, 42)))]
        assert [r.conn_id for r in core.registrations()] == [1]

    def test_id_zero_reserved(self):
        core = BrokerCore()
        out = core.handle_frame(1, register_frame(1, 0), now=0.0)
        status, _ = fr.unpack_register_ack(out[0][1].body)
        assert status == 1
        assert core.registrations() == []

    def test_join_event_reaches_lifecycle_subscribers(self):
        watcher_pattern = SubscriptionPattern.literal(bytes([tp.FROM, 0xFF, 0xFF]))
        core = make_core_with((1, 0xFFFF, 99, (watcher_pattern,)))
        out = core.handle_frame(2, register_frame(0x0000, 7), now=0.0)
        events = [(c, f) for c, f in out if f.frame_type == FrameType.EVENT]
        assert len(events) == 1
        conn, event = events[0]
        topic, payload = fr.unpack_event(event.body)
        assert conn == 1
        assert topic == tp.encode_lifecycle_topic(JOIN)
        assert fr.unpack_lifecycle_payload(payload) == (0x0000, 7)

    def test_second_register_on_same_conn_is_protocol_error(self):
        core = make_core_with((1, 1, 42, ()))
        with pytest.raises(BusProtocolError):
            core.handle_frame(1, register_frame(1, 43), now=0.0)

    def test_frames_before_register_rejected_except_heartbeat(self):
        core = BrokerCore()
        assert core.handle_frame(1, BusFrame(FrameType.HEARTBEAT), now=0.0) == []
        with pytest.raises(BusProtocolError):
            core.handle_frame(1, publish_frame(b"\x02"), now=0.0)


class TestPublish:
    def test_delivery_excludes_publisher(self):
        everything = (SubscriptionPattern.literal(b"\x02"),)
        core = make_core_with((1, 1, 0xA, everything), (2, 1, 0xB, everything))
        out = core.handle_frame(1, publish_frame(b"\x02\x00", b"hi"), now=0.0)
        assert out == [(2, BusFrame(FrameType.EVENT, fr.pack_event(b"\x02\x00", b"hi")))]

    def test_no_subscriber_no_error(self):
        core = make_core_with((1, 1, 0xA, ()))
        assert core.handle_frame(1, publish_frame(b"\x02\x99"), now=0.0) == []

    def test_subscribe_then_unsubscribe(self):
        core = make_core_with((1, 1, 0xA, ()), (2, 1, 0xB, ()))
        pattern = SubscriptionPattern.literal(b"\x02")
        core.handle_frame(2, BusFrame(FrameType.SUBSCRIBE, fr.pack_pattern(pattern)), now=0.0)
        assert core.route(b"\x02\x01") == [2]
        core.handle_frame(2, BusFrame(FrameType.UNSUBSCRIBE, fr.pack_pattern(pattern)), now=0.0)
        assert core.route(b"\x02\x01") == []

    def test_fifo_order_preserved_in_outputs(self):
        everything = (SubscriptionPattern.literal(b"\x02"),)
        core = make_core_with((1, 1, 0xA, ()), (2, 1, 0xB, everything))
        seen = []
        for i in range(50):
            out = core.handle_frame(1, publish_frame(b"\x02", i.to_bytes(2, "big")), now=0.0)
            seen.extend(fr.unpack_event(f.body)[1] for _, f in out)
        assert seen == [i.to_bytes(2, "big") for i in range(50)]


class TestRequestReply:
    def test_forward_and_reply_mapping(self):
        core = make_core_with((1, 1, 0xA, ()), (2, 1, 0xB, ()))
        out = core.handle_frame(1, BusFrame(FrameType.REQUEST, fr.pack_request(0xB, 77, b"ping")), now=0.0)
        assert len(out) == 1 and out[0][0] == 2
        target_id, broker_req_id, payload = fr.unpack_request(out[0][1].body)
        assert (target_id, payload) == (0xB, b"ping")

        out = core.handle_frame(2, BusFrame(FrameType.REPLY, fr.pack_reply(broker_req_id, 0, b"pong")), now=0.0)
        assert out == [(1, BusFrame(FrameType.REPLY, fr.pack_reply(77, 0, b"pong")))]

    def test_two_origins_same_req_id_do_not_collide(self):
        core = make_core_with((1, 1, 0xA, ()), (2, 1, 0xB, ()), (3, 1, 0xC, ()))
        out1 = core.handle_frame(1, BusFrame(FrameType.REQUEST, fr.pack_request(0xC, 5, b"from-a")), now=0.0)
        out2 = core.handle_frame(2, BusFrame(FrameType.REQUEST, fr.pack_request(0xC, 5, b"from-b")), now=0.0)
        rid1 = fr.unpack_request(out1[0][1].body)[1]
        rid2 = fr.unpack_request(out2[0][1].body)[1]
        assert rid1 != rid2
        back = core.handle_frame(3, BusFrame(FrameType.REPLY, fr.pack_reply(rid2, 0, b"B!")), now=0.0)
        assert back == [(2, BusFrame(FrameType.REPLY, fr.pack_reply(5, 0, b"B!")))]

    def test_unknown_target_immediate_error(self):
        core = make_core_with((1, 1, 0xA, ()))
        out = core.handle_frame(1, BusFrame(FrameType.REQUEST, fr.pack_request(0x999, 7, b"")), now=0.0)
        assert out == [(1, BusFrame(FrameType.REPLY, fr.pack_reply(7, 1, b"")))]

    def test_registry_list_service(self):
        core = make_core_with((1, 0x0000, 0xAA, ()), (2, 0x0001, 0x01, ()))
        out = core.handle_frame(1, BusFrame(FrameType.REQUEST, fr.pack_request(BROKER_ID, 3, bytes([OP_LIST]))), now=0.0)
        req_id, status, body = fr.unpack_reply(out[0][1].body)
        assert (req_id, status) == (3, 0)
        # count, then (type, id) sorted by instance id
        assert body == bytes.fromhex("0002" "0001" "0000000000000001" "0000" "00000000000000aa")

    def test_registry_unknown_opcode(self):
        core = make_core_with((1, 1, 0xA, ()))
        out = core.handle_frame(1, BusFrame(FrameType.REQUEST, fr.pack_request(BROKER_ID, 4, b"\x09")), now=0.0)
        assert fr.unpack_reply(out[0][1].body) == (4, 1, b"")

    def test_reply_after_origin_disconnect_dropped(self):
        core = make_core_with((1, 1, 0xA, ()), (2, 1, 0xB, ()))
        out = core.handle_frame(1, BusFrame(FrameType.REQUEST, fr.pack_request(0xB, 9, b"")), now=0.0)
        rid = fr.unpack_request(out[0][1].body)[1]
        core.handle_disconnect(1)
        assert core.handle_frame(2, BusFrame(FrameType.REPLY, fr.pack_reply(rid, 0, b"late")), now=0.0) == []


class TestLiveness:
    def lifecycle_watcher(self):
        return SubscriptionPattern.literal(bytes([tp.FROM, 0xFF, 0xFF]))

    def leave_ids(self, outbound):
        ids = []
        for _, frame in outbound:
            topic, payload = fr.unpack_event(frame.body)
            assert topic == tp.encode_lifecycle_topic(LEAVE)
            ids.append(fr.unpack_lifecycle_payload(payload)[1])
        return ids

    def test_bye_emits_leave(self):
        core = make_core_with((1, 0xFFFF, 1, (self.lifecycle_watcher(),)), (2, 0x0000, 5, ()))
        out = core.handle_frame(2, BusFrame(FrameType.BYE), now=0.0)
        assert self.leave_ids(out) == [5]
        assert [r.instance_id for r in core.registrations()] == [1]

    def test_disconnect_equivalent_to_bye(self):
        core = make_core_with((1, 0xFFFF, 1, (self.lifecycle_watcher(),)), (2, 0x0000, 5, ()))
        assert self.leave_ids(core.handle_disconnect(2)) == [5]

    def test_sweep_drops_stale_in_id_order(self):
        core = make_core_with(
            (1, 0xFFFF, 1, (self.lifecycle_watcher(),)),
            (2, 0x0000, 0xBB, ()),
            (3, 0x0000, 0xAA, ()),
        )
        core.handle_frame(1, BusFrame(FrameType.HEARTBEAT), now=10.0)
        out, closed = core.sweep(now=10.0)
        assert self.leave_ids(out) == [0xAA, 0xBB]  # ascending instance id
        assert closed == [3, 2]
        assert [r.instance_id for r in core.registrations()] == [1]

    def test_sweep_all_fresh_is_identity(self):
        core = make_core_with((1, 1, 0xA, ()))
        out, closed = core.sweep(now=1.0)
        assert out == [] and closed == []
        assert len(core.registrations()) == 1

    def test_heartbeat_refreshes(self):
        core = make_core_with((1, 1, 0xA, ()))
        core.handle_frame(1, BusFrame(FrameType.HEARTBEAT), now=5.0)
        out, closed = core.sweep(now=10.0)  # 5 s since last beat < 6 s
        assert closed == []


class TestDeterminism:
    def scripted_inputs(self):
        everything = (SubscriptionPattern.literal(b"\x02"),)
        lifecycle = (SubscriptionPattern.literal(bytes([tp.FROM, 0xFF, 0xFF])),)
        script = [
            ("frame", 1, register_frame(0xFFFF, 1, lifecycle)),
            ("frame", 2, register_frame(0x0001, 0xA, everything)),
            ("frame", 3, register_frame(0x0001, 0xB, everything)),
            ("frame", 2, publish_frame(bytes.fromhex("020000000a0008 06".replace(" ", "")), b"p1")),
            ("frame", 3, publish_frame(b"\x02\x01", b"p2")),
            ("frame", 2, BusFrame(FrameType.REQUEST, fr.pack_request(0xB, 1, b"q"))),
            ("frame", 3, BusFrame(FrameType.REPLY, fr.pack_reply(1, 0, b"r"))),
            ("frame", 1, BusFrame(FrameType.REQUEST, fr.pack_request(BROKER_ID, 2, b"\x01"))),
            ("frame", 3, BusFrame(FrameType.BYE)),
            ("sweep", None, None),
        ]
        return script

    def run_script(self):
        core = BrokerCore()
        wire = bytearray()
        for kind, conn_id, frame in self.scripted_inputs():
            if kind == "frame":
                outputs = core.handle_frame(conn_id, frame, now=0.0)
            else:
                outputs, _ = core.sweep(now=100.0)
            for out_conn, out_frame in outputs:
                wire += out_conn.to_bytes(2, "big") + fr.frame_encode(out_frame)
        return bytes(wire)

    def test_replay_byte_identical(self):
        first = self.run_script()
        assert len(first) > 0
        for _ in range(9):
            assert self.run_script() == first
