"""L2 learning-switch controllet.

The classic design: learn source MAC to ingress port, forward to the learned
port for known destinations (installing a dl_dst flow so future packets skip
the controller), flood unknowns.  The controllet form subscribes to one
LB_GROUP shard of the PACKET_IN topic space — or all of them with a
wildcarded group byte — so replicas divide work without coordination.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from zsdn import ofcodec as of
from zsdn import topic as tp
from zsdn.bus.broker import OP_STATS
from zsdn.kernel import Controllet

log = logging.getLogger(__name__)

MAC_AGE_OUT = 300.0
FLOW_PRIORITY = 100
FLOW_IDLE_TIMEOUT = 60
FLOW_HARD_TIMEOUT = 0

# Ethertypes this controllet subscribes to; LLDP stays with the topology
# controllet's separate subscription.
HANDLED_ETHERTYPES = (tp.ETH_ARP, tp.ETH_IPV4)


@dataclass
class MacTable:
    """(dpid, mac) -> ingress port, with age-out."""

    age_out: float = MAC_AGE_OUT
    entries: dict = field(default_factory=dict)  # (dpid, mac) -> (port, learned_at)

    def learn(self, dpid: int, mac: bytes, port: int, now: float) -> None:
        self.entries[(dpid, mac)] = (port, now)

    def lookup(self, dpid: int, mac: bytes, now: float) -> int | None:
        entry = self.entries.get((dpid, mac))
        if entry is None:
            return None
        port, learned_at = entry
        if now - learned_at > self.age_out:
            del self.entries[(dpid, mac)]
            return None
        return port

    def __len__(self) -> int:
        return len(self.entries)


def learning_step(table: MacTable, dpid: int, pkt: of.PacketIn, now: float,
                  xid: int = 0) -> list[tuple[bytes, bytes]]:
    """One packet-in through the learning algorithm.

    Returns (topic, payload) publications addressed to the switch; the table
    is updated in place.  Never emits an output toward the ingress port.
    """
    fc = of.classify_frame(pkt.frame)
    table.learn(dpid, fc.eth_src, pkt.in_port, now)
    out_port = table.lookup(dpid, fc.eth_dst, now)
    if out_port == pkt.in_port:
        return []  # destination is back where it came from: nothing to do
    actions: list[tuple[bytes, bytes]] = []
    if out_port is None:
        packet_out = of.PacketOut(
            xid=xid, buffer_id=pkt.buffer_id, in_port=pkt.in_port,
            actions=(of.OutputAction(of.OFPP_FLOOD),),
            frame=pkt.frame if pkt.buffer_id == of.NO_BUFFER else b"",
        )
        actions.append((tp.encode_to_switch_topic(dpid, tp.PACKET_OUT), of.encode(packet_out)))
        return actions
    flow_mod = of.FlowMod(
        xid=xid,
        match=of.Match10.exact_dl_dst(fc.eth_dst),
        priority=FLOW_PRIORITY,
        idle_timeout=FLOW_IDLE_TIMEOUT,
        hard_timeout=FLOW_HARD_TIMEOUT,
        actions=(of.OutputAction(out_port),),
    )
    packet_out = of.PacketOut(
        xid=xid, buffer_id=pkt.buffer_id, in_port=pkt.in_port,
        actions=(of.OutputAction(out_port),),
        frame=pkt.frame if pkt.buffer_id == of.NO_BUFFER else b"",
    )
    actions.append((tp.encode_to_switch_topic(dpid, tp.FLOW_MOD), of.encode(flow_mod)))
    actions.append((tp.encode_to_switch_topic(dpid, tp.PACKET_OUT), of.encode(packet_out)))
    return actions


def packet_in_patterns(lb_group: int | None) -> tuple[tp.SubscriptionPattern, ...]:
    """Subscriptions for the handled ethertypes; None wildcards the LB byte."""
    patterns = []
    for ethertype in HANDLED_ETHERTYPES:
        base = bytes([tp.FROM, 0x00, 0x00, tp.OPENFLOW, tp.PACKET_IN,
                      lb_group or 0x00]) + ethertype.to_bytes(2, "big")
        if lb_group is None:
            patterns.append(tp.SubscriptionPattern.with_wildcards(base, [5]))
        else:
            patterns.append(tp.SubscriptionPattern.literal(base))
    return tuple(patterns)


class LearningSwitch(Controllet):
    """The runnable controllet around learning_step.

    ``work_us`` busy-waits nothing — it sleeps, modelling control logic that
    awaits I/O (databases, policy services) per packet, which is what makes
    replica scaling observable on a single machine.
    """

    def __init__(self, *, lb_group: int | None = 0, instance_id: int | None = None,
                 bus_addr: str | None = None, work_us: int = 0, **kwargs):
        super().__init__(
            tp.LEARNING_SWITCH,
            instance_id=instance_id,
            bus_addr=bus_addr,
            to_patterns=packet_in_patterns(lb_group),
            from_topics=(
                bytes([tp.TO, 0x00, 0x00]),  # advertises switch-bound publishes
            ),
            **kwargs,
        )
        self.lb_group = lb_group
        self.work_us = work_us
        self.table = MacTable()
        self.processed = 0
        self._xid = 0

    def on_event(self, topic: bytes, payload: bytes) -> None:
        if len(payload) < 8:
            return
        dpid = int.from_bytes(payload[:8], "big")
        try:
            msg = of.decode(payload[8:])
        except of.OfDecodeError as exc:
            log.warning("undecodable packet-in payload: %s", exc)
            return
        if not isinstance(msg, of.PacketIn):
            return
        if self.work_us:
            time.sleep(self.work_us / 1e6)
        self._xid = (self._xid + 1) & 0xFFFFFFFF
        for pub_topic, pub_payload in learning_step(self.table, dpid, msg,
                                                    time.monotonic(), xid=self._xid):
            self.publish(pub_topic, pub_payload)
        self.processed += 1

    def on_request(self, payload: bytes) -> tuple[int, bytes]:
        if payload and payload[0] == OP_STATS:
            return 0, self.processed.to_bytes(8, "big")
        return 1, b""
