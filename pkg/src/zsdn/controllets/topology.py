"""Topology controllet: LLDP-based link discovery.

Every cycle it asks each live SwitchAdapter for its port list and floods one
LLDP probe per port (as a PacketOut through the bus).  Probes that re-enter
as PACKET_INs on other switches reveal directed edges; a link is reported
once both directions are fresh, and expires after three silent cycles.
Consumers get LINK_UP/LINK_DOWN events plus a LINKS request service.
"""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field

from zsdn import ofcodec as of
from zsdn import topic as tp
from zsdn.bus.broker import OP_LINKS, OP_PORTS
from zsdn.bus.client import BusError, RequestTimeout
from zsdn.kernel import Controllet

log = logging.getLogger(__name__)

LLDP_PERIOD = 1.0
EXPIRY_CYCLES = 3

LINK_UP = 0x01
LINK_DOWN = 0x02

_LINK_PAYLOAD = struct.Struct("!QHQH")

Endpoint = tuple[int, int]  # (dpid, port)
Link = tuple[int, int, int, int]  # dpidA, portA, dpidB, portB — canonical


def canonical_link(a: Endpoint, b: Endpoint) -> Link:
    """One representation per bidirectional link: smaller dpid first."""
    if (a[0], a[1]) <= (b[0], b[1]):
        return (*a, *b)
    return (*b, *a)


@dataclass
class LinkGraph:
    """Directed LLDP sightings with freshness, and the derived link set."""

    ttl: float = LLDP_PERIOD * EXPIRY_CYCLES
    edges: dict = field(default_factory=dict)  # (src Endpoint, dst Endpoint) -> last_seen

    def observe(self, src: Endpoint, dst: Endpoint, now: float) -> None:
        self.edges[(src, dst)] = now

    def expire(self, now: float) -> None:
        stale = [k for k, seen in self.edges.items() if now - seen > self.ttl]
        for k in stale:
            del self.edges[k]

    def prune_dpid(self, dpid: int) -> None:
        dead = [k for k in self.edges if k[0][0] == dpid or k[1][0] == dpid]
        for k in dead:
            del self.edges[k]

    def bidirectional_links(self) -> set[Link]:
        links = set()
        for (src, dst) in self.edges:
            if (dst, src) in self.edges:
                links.add(canonical_link(src, dst))
        return links


def topology_on_packet_in(graph: LinkGraph, dpid_recv: int, pkt: of.PacketIn,
                          now: float) -> bool:
    """Record the directed edge an LLDP packet-in reveals.

    Returns False (graph untouched) for frames that are not this artifact's
    LLDP probes.
    """
    try:
        chassis_dpid, port_sent = of.decode_lldp(pkt.frame)
    except (of.LldpNotOurs, ValueError):
        return False
    graph.observe((chassis_dpid, port_sent), (dpid_recv, pkt.in_port), now)
    return True


def pack_links_reply(links: set[Link]) -> bytes:
    ordered = sorted(links)
    return len(ordered).to_bytes(2, "big") + b"".join(_LINK_PAYLOAD.pack(*l) for l in ordered)


def parse_links_reply(body: bytes) -> list[Link]:
    (count,) = struct.unpack_from("!H", body, 0)
    return [
        _LINK_PAYLOAD.unpack_from(body, 2 + i * _LINK_PAYLOAD.size)  # type: ignore[misc]
        for i in range(count)
    ]


def link_event_topic(code: int) -> bytes:
    return bytes([tp.FROM]) + tp.TOPOLOGY.to_bytes(2, "big") + bytes([code])


LLDP_PATTERN = tp.SubscriptionPattern.with_wildcards(
    bytes([tp.FROM, 0x00, 0x00, tp.OPENFLOW, tp.PACKET_IN, 0x00]) + tp.ETH_LLDP.to_bytes(2, "big"),
    [5],  # every LB group: topology must see each probe exactly once
)


class TopologyControllet(Controllet):
    """Periodic LLDP prober plus the LINKS query service."""

    def __init__(self, *, lldp_period: float = LLDP_PERIOD, instance_id: int | None = None,
                 bus_addr: str | None = None, **kwargs):
        super().__init__(
            tp.TOPOLOGY,
            instance_id=instance_id,
            bus_addr=bus_addr,
            to_patterns=(LLDP_PATTERN,),
            from_topics=(link_event_topic(LINK_UP), link_event_topic(LINK_DOWN)),
            tick_interval=lldp_period,
            **kwargs,
        )
        self.lldp_period = lldp_period
        self.graph = LinkGraph(ttl=lldp_period * EXPIRY_CYCLES)
        self._reported: set[Link] = set()
        self._xid = 0

    # -- probing ---------------------------------------------------------------

    def on_tick(self, now: float) -> None:
        self.graph.expire(now)
        for dpid in self.view.ids_of_type(tp.SWITCH_ADAPTER):
            try:
                status, body = self.request(dpid, bytes([OP_PORTS]),
                                            timeout=min(1.0, self.lldp_period))
            except (RequestTimeout, BusError):
                continue  # skipped this cycle
            if status != 0:
                continue
            (count,) = struct.unpack_from("!H", body, 0)
            ports = struct.unpack_from(f"!{count}H", body, 2) if count else ()
            for port in ports:
                self._send_probe(dpid, port)
        self._publish_diffs()

    def _send_probe(self, dpid: int, port: int) -> None:
        self._xid = (self._xid + 1) & 0xFFFFFFFF
        packet_out = of.PacketOut(
            xid=self._xid, buffer_id=of.NO_BUFFER, in_port=of.OFPP_NONE,
            actions=(of.OutputAction(port),), frame=of.build_lldp(dpid, port),
        )
        self.publish(tp.encode_to_switch_topic(dpid, tp.PACKET_OUT), of.encode(packet_out))

    # -- sightings ---------------------------------------------------------------

    def on_event(self, topic: bytes, payload: bytes) -> None:
        if len(payload) < 8:
            return
        dpid_recv = int.from_bytes(payload[:8], "big")
        try:
            msg = of.decode(payload[8:])
        except of.OfDecodeError:
            return
        if not isinstance(msg, of.PacketIn):
            return
        if topology_on_packet_in(self.graph, dpid_recv, msg, time.monotonic()):
            self._publish_diffs()

    def on_peer_leave(self, controllet_type: int, instance_id: int) -> None:
        if controllet_type == tp.SWITCH_ADAPTER:
            self.graph.prune_dpid(instance_id)
            self._publish_diffs()

    def _publish_diffs(self) -> None:
        current = self.graph.bidirectional_links()
        for link in sorted(current - self._reported):
            self.publish(link_event_topic(LINK_UP), _LINK_PAYLOAD.pack(*link))
        for link in sorted(self._reported - current):
            self.publish(link_event_topic(LINK_DOWN), _LINK_PAYLOAD.pack(*link))
        self._reported = current

    # -- service -----------------------------------------------------------------

    def on_request(self, payload: bytes) -> tuple[int, bytes]:
        if payload and payload[0] == OP_LINKS:
            return 0, pack_links_reply(self.graph.bidirectional_links())
        return 1, b""
