#!/usr/bin/env python3
"""Regenerate sdk-ts/test/golden_frames.json from the Python encoders.

The fixture pins the TypeScript SDK to the exact bytes the Python side
produces: bus frames, topics, OpenFlow messages, and full learning-step
publication sequences.  Run from the repository root after changing any
wire format:

    python3 tools/gen_golden_frames.py
"""

from __future__ import annotations

import json
from pathlib import Path

from zsdn import ofcodec as of
from zsdn import topic as tp
from zsdn.bus import frames as fr
from zsdn.bus.frames import BusFrame, FrameType, frame_encode
from zsdn.controllets.learning_switch import MacTable, learning_step, packet_in_patterns

OUT = Path(__file__).resolve().parent.parent / "sdk-ts" / "test" / "golden_frames.json"

MAC_A = bytes.fromhex("0a0000000001")
MAC_B = bytes.fromhex("0a0000000002")
MAC_C = bytes.fromhex("0a0000000003")
BROADCAST = b"\xff" * 6


def bus_frame(name: str, frame_type: int, body: bytes) -> dict:
    return {
        "kind": "bus-frame",
        "name": name,
        "frame_type": frame_type,
        "body": body.hex(),
        "encoded": frame_encode(BusFrame(frame_type, body)).hex(),
    }


def of_message(name: str, msg) -> dict:
    return {"kind": "of-message", "name": name, "encoded": of.encode(msg).hex()}


def topic_entry(name: str, topic: bytes) -> dict:
    return {"kind": "topic", "name": name, "encoded": topic.hex()}


def arp(dst: bytes, src: bytes) -> bytes:
    return of.ethernet_frame(dst, src, tp.ETH_ARP, b"\x00" * 28)


def packet_in(in_port: int, frame: bytes, buffer_id: int = of.NO_BUFFER) -> of.PacketIn:
    return of.PacketIn(xid=0, buffer_id=buffer_id, total_len=len(frame),
                       in_port=in_port, reason=of.OFPR_NO_MATCH, frame=frame)


def learning_vectors() -> list[dict]:
    """A scripted packet sequence with the primary's exact publications."""
    table = MacTable()
    script = [
        ("unknown-dst-floods", 5, 10.0, packet_in(1, arp(MAC_B, MAC_A))),
        ("reply-installs-flow", 5, 10.1, packet_in(2, arp(MAC_A, MAC_B))),
        ("forward-learned", 5, 10.2, packet_in(1, arp(MAC_B, MAC_A))),
        ("buffered-omits-frame", 5, 10.3, packet_in(2, arp(MAC_A, MAC_C), buffer_id=0x42)),
        ("toward-ingress-is-silent", 5, 10.4, packet_in(1, arp(MAC_A, MAC_C))),
        ("tables-are-per-switch", 7, 10.5, packet_in(3, arp(MAC_A, MAC_B))),
    ]
    entries = []
    for name, dpid, now, pkt in script:
        publications = learning_step(table, dpid, pkt, now)
        entries.append({
            "kind": "learning-step",
            "name": name,
            "dpid": dpid,
            "now": now,
            "packet_in": of.encode(pkt).hex(),
            "expect": [{"topic": t.hex(), "payload": p.hex()} for t, p in publications],
        })
    return entries


def main() -> None:
    flow_mod = of.FlowMod(match=of.Match10.exact_dl_dst(MAC_B), priority=100,
                          idle_timeout=60, actions=(of.OutputAction(2),))
    packet_out = of.PacketOut(buffer_id=of.NO_BUFFER, in_port=1,
                              actions=(of.OutputAction(of.OFPP_FLOOD),),
                              frame=arp(BROADCAST, MAC_A))
    entries = [
        bus_frame("heartbeat", FrameType.HEARTBEAT, b""),
        bus_frame("bye", FrameType.BYE, b""),
        bus_frame("register-learning-lb0",
                  FrameType.REGISTER,
                  fr.pack_register(tp.LEARNING_SWITCH, 0x00C0FFEE,
                                   to_patterns=packet_in_patterns(0),
                                   from_topics=(bytes([tp.TO, 0x00, 0x00]),))),
        bus_frame("register-learning-wildcard",
                  FrameType.REGISTER,
                  fr.pack_register(tp.LEARNING_SWITCH, 0x00C0FFEE,
                                   to_patterns=packet_in_patterns(None),
                                   from_topics=(bytes([tp.TO, 0x00, 0x00]),))),
        bus_frame("publish-flow-mod",
                  FrameType.PUBLISH,
                  fr.pack_publish(tp.encode_to_switch_topic(5, tp.FLOW_MOD),
                                  of.encode(flow_mod))),
        bus_frame("publish-packet-out-flood",
                  FrameType.PUBLISH,
                  fr.pack_publish(tp.encode_to_switch_topic(5, tp.PACKET_OUT),
                                  of.encode(packet_out))),
        bus_frame("reply-stats-ok",
                  FrameType.REPLY,
                  fr.pack_reply(7, 0, (42).to_bytes(8, "big"))),
        bus_frame("event-packet-in",
                  FrameType.EVENT,
                  fr.pack_publish(tp.encode_packet_in_topic(0, tp.ETH_ARP),
                                  (5).to_bytes(8, "big")
                                  + of.encode(packet_in(1, arp(MAC_B, MAC_A))))),
        topic_entry("topic-packet-in-lb0-arp", tp.encode_packet_in_topic(0, tp.ETH_ARP)),
        topic_entry("topic-packet-in-lb3-ipv4-tcp",
                    tp.encode_packet_in_topic(3, tp.ETH_IPV4, 6)),
        topic_entry("topic-to-switch-flow-mod", tp.encode_to_switch_topic(5, tp.FLOW_MOD)),
        topic_entry("topic-to-switch-packet-out",
                    tp.encode_to_switch_topic(0x1122334455667788, tp.PACKET_OUT)),
        of_message("of-flow-mod-learned", flow_mod),
        of_message("of-packet-out-flood", packet_out),
        of_message("of-packet-out-buffered",
                   of.PacketOut(buffer_id=0x42, in_port=2,
                                actions=(of.OutputAction(1),), frame=b"")),
        of_message("of-packet-in-arp", packet_in(1, arp(MAC_B, MAC_A))),
        *learning_vectors(),
    ]
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(entries, indent=2) + "\n")
    print(f"wrote {len(entries)} entries to {OUT}")


if __name__ == "__main__":
    main()
