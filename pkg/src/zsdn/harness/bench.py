"""Cbench-style PACKET_IN throughput benchmark over the full pipeline.

N mock switches (each behind its own SwitchAdapter) inject frames with an
unknown destination; every injection produces exactly one PACKET_IN on the
bus and exactly one PacketOut response from whichever learning-switch
replica the LB byte selected.  Closed-loop mode injects the next frame only
after the previous response arrived, giving exact per-replica counts;
open-loop mode keeps a bounded number of injections outstanding per switch
and measures throughput.

A "response" is either a FlowMod or a PacketOut received by a mock switch;
frames here have a broadcast destination, so in practice each PACKET_IN
yields one flood PacketOut.  Rate is responses divided by the whole run
(injection plus drain).  Per-packet controller work is modelled with
``work_us`` of sleep in the replica — stand-in for the I/O-bound policy
lookups real control logic performs — which is what lets replica scaling
show on a single machine.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

from zsdn import ofcodec as of
from zsdn.bus.broker import OP_STATS, BrokerServer
from zsdn.bus.client import BusError, BusSession
from zsdn.controllets.learning_switch import LearningSwitch
from zsdn.harness.mock_switch import MockSwitch
from zsdn.switch_adapter import accept_one_switch

REPLICA_ID_BASE = 0xBE0000
OBSERVER_TYPE = 0x00E1
DEFAULT_WORK_US = 200
DEFAULT_WINDOW = 32

BROADCAST = b"\xff" * 6


class BenchError(Exception):
    pass


@dataclass
class BenchReport:
    mode: str
    switches: int
    replicas: int
    duration: float
    packet_ins: int
    responses: int
    rate: float
    per_replica: list[int]
    published: int
    processed: int

    @property
    def conservation_ok(self) -> bool:
        return self.published == self.processed

    def format(self) -> str:
        lines = [
            f"bench mode={self.mode} switches={self.switches} replicas={self.replicas}",
            f"  duration      {self.duration:.3f} s",
            f"  packet-ins    {self.packet_ins}",
            f"  responses     {self.responses}",
            f"  rate          {self.rate:.1f} responses/s",
            f"  per-replica   {self.per_replica}",
            f"  conservation  published={self.published} processed={self.processed} "
            + ("ok" if self.conservation_ok else "VIOLATED"),
        ]
        return "\n".join(lines)


class _Pipeline:
    """Broker + R replicas + N switch/SA pairs, ready to pump frames."""

    def __init__(self, switches: int, replicas: int, work_us: int):
        self.broker = BrokerServer(port=0).start()
        self.replica_ids = [REPLICA_ID_BASE + r for r in range(replicas)]
        self.replicas = [
            LearningSwitch(lb_group=r, instance_id=self.replica_ids[r],
                           work_us=work_us, bus_addr=self.broker.address)
            for r in range(replicas)
        ]
        self.adapters = []
        self.mocks: list[MockSwitch] = []
        self.observer: BusSession | None = None
        try:
            for replica in self.replicas:
                replica.start()
            for replica in self.replicas:
                if not replica.wait_active(10):
                    raise BenchError("replica never became active")
            for i in range(switches):
                self._boot_switch(i + 1, len(self.replica_ids))
            self.observer = BusSession(self.broker.address).connect()
            self.observer.register(OBSERVER_TYPE, 0xBEEF)
        except BaseException:
            self.close()
            raise

    def _boot_switch(self, dpid: int, lb_groups: int) -> None:
        ready = threading.Event()
        holder: dict = {}

        def on_listening(host, port):
            holder["addr"] = f"127.0.0.1:{port}"
            ready.set()

        def acceptor():
            try:
                holder["adapter"] = accept_one_switch(
                    "127.0.0.1:0", lb_groups=lb_groups,
                    bus_addr=self.broker.address, on_listening=on_listening)
            except Exception as exc:
                holder["error"] = exc
                ready.set()

        t = threading.Thread(target=acceptor, name=f"bench-sa-{dpid}", daemon=True)
        t.start()
        if not ready.wait(10) or "error" in holder:
            raise BenchError(f"SA {dpid} failed to listen: {holder.get('error')}")
        mock = MockSwitch(dpid, (1, 2)).connect(holder["addr"])
        t.join(timeout=10)
        adapter = holder.get("adapter")
        if adapter is None:
            raise BenchError(f"SA {dpid} failed: {holder.get('error')}")
        adapter.start()
        if not adapter.wait_active(10):
            raise BenchError(f"SA {dpid} never became active")
        self.adapters.append(adapter)
        self.mocks.append(mock)

    def frame_for(self, mock: MockSwitch) -> bytes:
        src = b"\x0a\x00\x00\x00\x00" + bytes([mock.state.dpid & 0xFF])
        return of.ethernet_frame(BROADCAST, src, 0x0806, b"\x00" * 28)

    def per_replica_counts(self) -> list[int]:
        counts = []
        for rid in self.replica_ids:
            try:
                status, body = self.observer.request(rid, bytes([OP_STATS]), timeout=5)
            except BusError:
                status, body = 1, b""
            counts.append(int.from_bytes(body, "big") if status == 0 else 0)
        return counts

    def published_total(self) -> int:
        return sum(a.sa.published_packet_ins for a in self.adapters)

    def close(self) -> None:
        if self.observer is not None:
            self.observer.close()
        for mock in self.mocks:
            mock.stop()
        for adapter in self.adapters:
            adapter.stop()
        for replica in self.replicas:
            replica.stop()
        self.broker.shutdown()


def _await_conservation(pipe: _Pipeline, timeout: float = 10.0) -> tuple[int, int]:
    """Processed counters lag the last response by a hair; poll them level."""
    deadline = time.monotonic() + timeout
    while True:
        published = pipe.published_total()
        processed = sum(pipe.per_replica_counts())
        if processed >= published or time.monotonic() > deadline:
            return published, processed
        time.sleep(0.05)


def bench_run(*, switches: int = 16, replicas: int = 1, duration: float = 10.0,
              open_loop: bool = False, count: int = 10_000,
              work_us: int = DEFAULT_WORK_US, window: int = DEFAULT_WINDOW,
              echo=None) -> BenchReport:
    """Run one benchmark and return its report.

    Closed loop sends exactly ``count`` PACKET_INs (count must divide evenly
    across switches); open loop sends as many as fit in ``duration`` seconds
    with ``window`` outstanding per switch.
    """
    if switches < 1 or replicas < 1:
        raise BenchError("switches and replicas must be >= 1")
    if not open_loop:
        if count < switches or count % switches:
            raise BenchError(f"count {count} must divide evenly across {switches} switches")

    pipe = _Pipeline(switches, replicas, work_us)
    try:
        start = time.monotonic()
        if open_loop:
            injected = _drive_open(pipe, duration, window)
        else:
            injected = _drive_closed(pipe, count // switches)
        _drain(pipe, injected)
        elapsed = time.monotonic() - start
        responses = sum(m.ctrl_msgs for m in pipe.mocks)
        if responses == 0:
            raise BenchError("no responses came back: pipeline broken")
        published, processed = _await_conservation(pipe)
        report = BenchReport(
            mode="open" if open_loop else "closed",
            switches=switches, replicas=replicas, duration=elapsed,
            packet_ins=injected, responses=responses,
            rate=responses / elapsed if elapsed > 0 else 0.0,
            per_replica=pipe.per_replica_counts(),
            published=published, processed=processed,
        )
        if echo:
            echo(report.format())
        return report
    finally:
        pipe.close()


def _drive_closed(pipe: _Pipeline, per_switch: int) -> int:
    """Inject, await the response, inject again; exact counts by design."""

    def driver(mock: MockSwitch):
        frame = pipe.frame_for(mock)
        for k in range(per_switch):
            mock.inject(1, frame)
            if not mock.wait_ctrl_msgs(k + 1, timeout=30):
                return  # counted as missing responses by the caller

    threads = [threading.Thread(target=driver, args=(m,), daemon=True)
               for m in pipe.mocks]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return per_switch * len(pipe.mocks)


def _drive_open(pipe: _Pipeline, duration: float, window: int) -> int:
    """Keep up to ``window`` injections outstanding per switch for the duration."""
    totals = [0] * len(pipe.mocks)

    def driver(idx: int, mock: MockSwitch):
        frame = pipe.frame_for(mock)
        deadline = time.monotonic() + duration
        sent = 0
        while time.monotonic() < deadline:
            if sent - mock.ctrl_msgs < window:
                mock.inject(1, frame)
                sent += 1
            else:
                mock.wait_ctrl_msgs(sent - window + 1, timeout=0.1)
        totals[idx] = sent

    threads = [threading.Thread(target=driver, args=(i, m), daemon=True)
               for i, m in enumerate(pipe.mocks)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return sum(totals)


def _drain(pipe: _Pipeline, injected: int, timeout: float = 30.0) -> None:
    """Wait for every outstanding injection's response (or give up)."""
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if sum(m.ctrl_msgs for m in pipe.mocks) >= injected:
            return
        time.sleep(0.05)
