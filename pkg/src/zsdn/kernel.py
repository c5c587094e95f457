"""The controllet micro-kernel.

Every controllet embeds this runtime: it registers on the bus, discovers
peers through the broker registry and JOIN/LEAVE events, gates activation on
declared dependencies, heartbeats, and reconnects with backoff when the
broker goes away.  Business logic receives callbacks (``on_event``,
``on_request``, ``on_tick``) strictly serially from one loop thread.
"""

from __future__ import annotations

import logging
import queue
import random
import struct
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

from zsdn import topic as tp
from zsdn.bus.broker import BROKER_ID, JOIN, LEAVE, OP_LIST
from zsdn.bus.client import BusError, BusSession, RegistrationRefused, RequestTimeout
from zsdn.bus.frames import unpack_lifecycle_payload

log = logging.getLogger(__name__)

RECONNECT_MIN = 0.5
RECONNECT_MAX = 8.0
RECONNECT_JITTER = 0.2

# Watching this prefix yields every lifecycle event: FROM | KERNEL type.
LIFECYCLE_WATCH = tp.SubscriptionPattern.literal(bytes([tp.FROM, 0xFF, 0xFF]))


class ProgrammingError(Exception):
    """A lifecycle transition that cannot legally occur."""


class DiscoveryError(Exception):
    """The broker registry could not be queried."""


class LifecycleState(Enum):
    INIT = "init"
    CONNECTING = "connecting"
    WAITING_DEPS = "waiting_deps"
    ACTIVE = "active"
    STOPPED = "stopped"


_EVENTS = ("connected", "register_acked", "dep_satisfied", "dep_lost", "shutdown", "broker_lost")


def lifecycle_step(state: LifecycleState, event: str, deps_ok: bool = True) -> LifecycleState:
    """One transition of the controllet lifecycle machine.

    STOPPED is terminal; shutdown and broker_lost are accepted everywhere
    else; the remaining pairs follow the connect → register → gate flow and
    anything outside it is a programming error.
    """
    if event not in _EVENTS:
        raise ProgrammingError(f"unknown lifecycle event {event!r}")
    S = LifecycleState
    if state is S.STOPPED:
        return S.STOPPED
    if event == "shutdown":
        return S.STOPPED
    if event == "broker_lost":
        return S.CONNECTING
    table = {
        (S.INIT, "connected"): S.CONNECTING,
        (S.CONNECTING, "connected"): S.CONNECTING,  # reconnect attempts
        (S.CONNECTING, "register_acked"): S.ACTIVE if deps_ok else S.WAITING_DEPS,
        (S.CONNECTING, "dep_satisfied"): S.CONNECTING,
        (S.CONNECTING, "dep_lost"): S.CONNECTING,
        (S.WAITING_DEPS, "dep_satisfied"): S.ACTIVE,
        (S.WAITING_DEPS, "dep_lost"): S.WAITING_DEPS,
        (S.ACTIVE, "dep_satisfied"): S.ACTIVE,
        (S.ACTIVE, "dep_lost"): S.ACTIVE,  # logged, never demoted
    }
    try:
        return table[(state, event)]
    except KeyError:
        raise ProgrammingError(f"no transition for ({state.name}, {event})") from None


@dataclass(frozen=True)
class DependencySpec:
    """Controllet types that must be live before this controllet activates."""

    required: tuple[tuple[int, int], ...] = ()  # (controllet_type, min_instances)

    @classmethod
    def of(cls, *types: int, min_instances: int = 1) -> DependencySpec:
        return cls(tuple((t, min_instances) for t in types))


def deps_satisfied(view: RegistryView, spec: DependencySpec) -> bool:
    return all(view.count_of_type(ctype) >= minimum for ctype, minimum in spec.required)


class RegistryView:
    """Live (controllet_type, instance_id) set, fed by LIST replies and
    JOIN/LEAVE events; duplicate-safe and order-independent per id."""

    def __init__(self) -> None:
        self._by_id: dict[int, int] = {}  # instance_id -> controllet_type

    @property
    def live(self) -> set[tuple[int, int]]:
        return {(ctype, iid) for iid, ctype in self._by_id.items()}

    def __contains__(self, entry: tuple[int, int]) -> bool:
        ctype, iid = entry
        return self._by_id.get(iid) == ctype

    def __len__(self) -> int:
        return len(self._by_id)

    def count_of_type(self, ctype: int) -> int:
        return sum(1 for t in self._by_id.values() if t == ctype)

    def ids_of_type(self, ctype: int) -> list[int]:
        return sorted(iid for iid, t in self._by_id.items() if t == ctype)

    def replace(self, entries: list[tuple[int, int]]) -> None:
        self._by_id = {iid: ctype for ctype, iid in entries}

    def apply_join(self, ctype: int, iid: int) -> None:
        self._by_id[iid] = ctype

    def apply_leave(self, ctype: int, iid: int) -> None:
        self._by_id.pop(iid, None)

    def apply_lifecycle(self, topic: bytes, payload: bytes) -> bool:
        """Apply a JOIN/LEAVE event; returns True if it was one."""
        if len(topic) != 4 or topic[:3] != bytes([tp.FROM, 0xFF, 0xFF]):
            return False
        ctype, iid = unpack_lifecycle_payload(payload)
        if topic[3] == JOIN:
            self.apply_join(ctype, iid)
        elif topic[3] == LEAVE:
            self.apply_leave(ctype, iid)
        else:
            return False
        return True


def parse_registry_reply(body: bytes) -> list[tuple[int, int]]:
    (count,) = struct.unpack_from("!H", body, 0)
    entries = []
    offset = 2
    for _ in range(count):
        ctype, iid = struct.unpack_from("!HQ", body, offset)
        entries.append((ctype, iid))
        offset += 10
    return entries


def registry_query(session: BusSession, timeout: float = 5.0) -> RegistryView:
    """Fetch the broker's current registration set as a fresh view."""
    try:
        status, body = session.request(BROKER_ID, bytes([OP_LIST]), timeout=timeout)
    except (RequestTimeout, BusError) as exc:
        raise DiscoveryError(f"registry LIST failed: {exc}") from exc
    if status != 0:
        raise DiscoveryError(f"registry LIST refused: status {status}")
    view = RegistryView()
    view.replace(parse_registry_reply(body))
    return view


class Controllet:
    """Base runtime for a controllet process.

    Subclasses (or users of the callback attributes) provide business logic;
    the kernel guarantees on_event/on_request/on_tick/on_active run serially
    on the loop thread, and that nothing is published before ACTIVE.
    """

    def __init__(
        self,
        controllet_type: int,
        instance_id: int | None = None,
        *,
        bus_addr: str | None = None,
        deps: DependencySpec = DependencySpec(),
        to_patterns: tuple = (),
        from_topics: tuple = (),
        tick_interval: float | None = None,
        rng: random.Random | None = None,
    ):
        self.controllet_type = controllet_type
        self._explicit_id = instance_id is not None
        self._rng = rng or random.Random()
        self.instance_id = instance_id if instance_id is not None else self._random_id()
        self.bus_addr = bus_addr
        self.deps = deps
        self.to_patterns = tuple(to_patterns)
        self.from_topics = tuple(from_topics)
        self.tick_interval = tick_interval
        self.state = LifecycleState.INIT
        self.view = RegistryView()
        self.session: BusSession | None = None
        self._inbox: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._started_active = threading.Event()

    # -- overridables -------------------------------------------------------

    def on_event(self, topic: bytes, payload: bytes) -> None:
        pass

    def on_request(self, payload: bytes) -> tuple[int, bytes]:
        return 1, b""

    def on_tick(self, now: float) -> None:
        pass

    def on_active(self) -> None:
        pass

    def on_inbox(self, item: tuple) -> None:
        """Items a subclass injected into the loop via ``inbox_put``."""

    def on_peer_join(self, controllet_type: int, instance_id: int) -> None:
        pass

    def on_peer_leave(self, controllet_type: int, instance_id: int) -> None:
        pass

    def inbox_put(self, item: tuple) -> None:
        self._inbox.put(item)

    # -- public API -----------------------------------------------------------

    def publish(self, topic: bytes, payload: bytes) -> None:
        if self.state is not LifecycleState.ACTIVE:
            raise ProgrammingError(f"publish in state {self.state.name}")
        self.session.publish(topic, payload)

    def request(self, target_id: int, payload: bytes, timeout: float = 5.0) -> tuple[int, bytes]:
        return self.session.request(target_id, payload, timeout=timeout)

    def start(self) -> Controllet:
        self._thread = threading.Thread(target=self.run, name=f"controllet-{self.instance_id:x}", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._inbox.put(("stop",))
        if self._thread is not None:
            self._thread.join(timeout=10)

    def wait_active(self, timeout: float = 10.0) -> bool:
        return self._started_active.wait(timeout)

    def run(self) -> None:
        """Blocking main loop: connect/register, then serve until stopped."""
        backoff = RECONNECT_MIN
        while not self._stop.is_set():
            try:
                self._connect_and_register()
                backoff = RECONNECT_MIN  # healthy session resets the backoff
                self._serve()
            except RegistrationRefused:
                if self._explicit_id:
                    self.state = LifecycleState.STOPPED
                    self._teardown_session()
                    raise
                self.instance_id = self._random_id()  # collision on a random id
                self._teardown_session()
                continue
            except (BusError, DiscoveryError, OSError) as exc:
                log.info("controllet %#x: bus unavailable (%s)", self.instance_id, exc)
            self._teardown_session()
            if self._stop.is_set():
                break
            self.state = lifecycle_step(self.state, "broker_lost")
            delay = backoff * self._rng.uniform(1 - RECONNECT_JITTER, 1 + RECONNECT_JITTER)
            backoff = min(backoff * 2, RECONNECT_MAX)
            if self._stop.wait(delay):
                break
        self.state = LifecycleState.STOPPED
        self._teardown_session()

    # -- internals ------------------------------------------------------------

    def _random_id(self) -> int:
        return self._rng.getrandbits(64) or 1

    def _connect_and_register(self) -> None:
        self._drain_inbox()
        self.session = BusSession(self.bus_addr, sink=self._inbox.put)
        self.session.connect()
        self.state = lifecycle_step(self.state, "connected")
        patterns = self.to_patterns + (LIFECYCLE_WATCH,)
        self.session.register(self.controllet_type, self.instance_id, patterns, self.from_topics)
        self.view = registry_query(self.session)
        self.state = lifecycle_step(self.state, "register_acked",
                                    deps_ok=deps_satisfied(self.view, self.deps))
        if self.state is LifecycleState.ACTIVE:
            self._enter_active()

    def _enter_active(self) -> None:
        self._started_active.set()
        try:
            self.on_active()
        except Exception:
            log.exception("on_active failed")

    def _serve(self) -> None:
        next_tick = time.monotonic() + self.tick_interval if self.tick_interval else None
        while not self._stop.is_set():
            timeout = 0.2
            now = time.monotonic()
            if next_tick is not None:
                if now >= next_tick:
                    if self.state is LifecycleState.ACTIVE:
                        try:
                            self.on_tick(now)
                        except Exception:
                            log.exception("on_tick failed")
                    next_tick = now + self.tick_interval
                timeout = min(timeout, max(next_tick - now, 0.0))
            try:
                item = self._inbox.get(timeout=timeout)
            except queue.Empty:
                continue
            kind = item[0]
            if kind == "stop":
                return
            if kind == "disconnect":
                return  # run() decides whether to reconnect
            if kind == "event":
                self._handle_event(item[1], item[2])
            elif kind == "request":
                reply, payload = item[1], item[2]
                try:
                    status, reply_payload = self.on_request(payload)
                except Exception:
                    log.exception("on_request failed")
                    status, reply_payload = 1, b""
                reply(status, reply_payload)
            else:
                try:
                    self.on_inbox(item)
                except Exception:
                    log.exception("on_inbox failed")

    def _handle_event(self, topic: bytes, payload: bytes) -> None:
        try:
            if self.view.apply_lifecycle(topic, payload):
                was = self.state
                event = "dep_satisfied" if deps_satisfied(self.view, self.deps) else "dep_lost"
                self.state = lifecycle_step(self.state, event)
                if was is LifecycleState.WAITING_DEPS and self.state is LifecycleState.ACTIVE:
                    self._enter_active()
                ctype, iid = unpack_lifecycle_payload(payload)
                if topic[3] == JOIN:
                    self.on_peer_join(ctype, iid)
                else:
                    self.on_peer_leave(ctype, iid)
                return
            self.on_event(topic, payload)
        except Exception:
            log.exception("on_event failed")

    def _drain_inbox(self) -> None:
        while True:
            try:
                self._inbox.get_nowait()
            except queue.Empty:
                return

    def _teardown_session(self) -> None:
        if self.session is not None:
            try:
                self.session.close()
            except BusError:
                pass
