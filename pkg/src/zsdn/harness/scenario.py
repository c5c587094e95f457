"""Declarative test scenarios: a tiny text format plus its runner.

A scenario file declares a topology of mock switches, hosts, and controllets,
then a timed script of frame injections and assertions.  The runner boots a
private broker, one SwitchAdapter per switch, the controllets, and the mock
switches, executes the script, and reports pass/fail with a transcript.

Format (one directive per line, ``#`` comments)::

    seed 7
    switch 1 ports 2                      # dpid 1, ports 1..2
    link 1:2 <-> 2:1                      # wire two switch ports ("<->" optional)
    host A 0a:00:00:00:00:01 at 1:1       # name, MAC, attachment point
    controllet learning-switch lb-group 0 # or: lb-wildcard, work-us N, exec "CMD"
    controllet topology lldp-period 500ms
    at 0.0 send A -> B                    # inject one frame from A toward B's MAC
    at 2.0 kill-sa 2                      # abrupt death of that switch's SA
    at 1.0 expect delivered B == 1 within 2
    at 1.5 expect flow 1 dl_dst A out 1
    at 1.5 expect flows 1 == 1
    at 1.5 expect packet-ins 1 <= 2
    at 3.0 expect links == 2 within 3

``expect`` polls until true or ``within`` seconds elapse (default 2), so
fixtures don't have to guess propagation delays.  Link graphs must be
loop-free; cycles are rejected at load time.  Transcripts contain scenario
time only, never wall-clock time, so a run is reproducible line for line.
"""

from __future__ import annotations

import os
import random
import shlex
import socket
import struct
import subprocess
import threading
import time
from dataclasses import dataclass, field

from zsdn import ofcodec as of
from zsdn import topic as tp
from zsdn.bus.broker import BROKER_ID, OP_LINKS, OP_LIST, BrokerServer
from zsdn.bus.client import BusError, BusSession
from zsdn.controllets.learning_switch import LearningSwitch
from zsdn.controllets.topology import TopologyControllet, parse_links_reply
from zsdn.harness.mock_switch import MockSwitch, attach_host, wire
from zsdn.kernel import Controllet, parse_registry_reply
from zsdn.switch_adapter import SwitchAdapter, accept_one_switch

OBSERVER_TYPE = 0x00E0


class ScenarioError(Exception):
    """The file is malformed or violates an invariant (e.g. a link cycle)."""


@dataclass
class HostDecl:
    name: str
    mac: bytes
    dpid: int
    port: int


@dataclass
class ControlletDecl:
    kind: str  # "learning-switch" | "topology"
    lb_group: int | None = 0  # None = wildcarded LB byte
    lldp_period: float = 1.0
    work_us: int = 0
    exec_cmd: str | None = None


@dataclass
class Step:
    t: float
    kind: str  # "send" | "kill-sa" | "expect"
    args: tuple
    within: float = 2.0
    text: str = ""


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    switches: dict[int, int] = field(default_factory=dict)  # dpid -> port count
    links: list[tuple[int, int, int, int]] = field(default_factory=list)
    hosts: dict[str, HostDecl] = field(default_factory=dict)
    controllets: list[ControlletDecl] = field(default_factory=list)
    steps: list[Step] = field(default_factory=list)

    def lb_groups(self) -> int:
        literal = [c.lb_group for c in self.controllets
                   if c.kind == "learning-switch" and c.lb_group is not None]
        return max(literal) + 1 if literal else 1


def _parse_mac(text: str) -> bytes:
    parts = text.split(":")
    if len(parts) != 6:
        raise ScenarioError(f"bad MAC {text!r}")
    try:
        return bytes(int(p, 16) for p in parts)
    except ValueError:
        raise ScenarioError(f"bad MAC {text!r}") from None


def _parse_endpoint(text: str) -> tuple[int, int]:
    dpid, _, port = text.partition(":")
    try:
        return int(dpid, 0), int(port)
    except ValueError:
        raise ScenarioError(f"bad switch:port {text!r}") from None


def _check_port(scn: Scenario, dpid: int, port: int, what: str) -> None:
    if dpid not in scn.switches:
        raise ScenarioError(f"{what} references undeclared switch {dpid}")
    if not 1 <= port <= scn.switches[dpid]:
        raise ScenarioError(f"{what} references port {dpid}:{port} out of range")


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    scn = Scenario(name=name)
    wired: set[tuple[int, int]] = set()
    parent: dict[int, int] = {}  # union-find over switches, for the loop check

    def find(x: int) -> int:
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            words = shlex.split(line)
            scn_parse_line(scn, words, wired, find, parent)
        except ScenarioError as exc:
            raise ScenarioError(f"line {lineno}: {exc}") from None
        except (ValueError, IndexError) as exc:
            raise ScenarioError(f"line {lineno}: cannot parse {line!r} ({exc})") from None
    if not scn.switches:
        raise ScenarioError("no switches declared")
    scn.steps.sort(key=lambda s: s.t)
    return scn


def scn_parse_line(scn, words, wired, find, parent) -> None:
    head = words[0]
    if head == "seed":
        scn.seed = int(words[1], 0)
    elif head == "switch":
        dpid = int(words[1], 0)
        if dpid in scn.switches:
            raise ScenarioError(f"switch {dpid} declared twice")
        if words[2] != "ports":
            raise ScenarioError("expected 'ports'")
        n = int(words[3])
        if not 1 <= n <= 64:
            raise ScenarioError(f"port count {n} out of range")
        scn.switches[dpid] = n
    elif head == "link":
        ends = [w for w in words[1:] if w != "<->"]
        if len(ends) != 2:
            raise ScenarioError("link needs two endpoints")
        (da, pa), (db, pb) = _parse_endpoint(ends[0]), _parse_endpoint(ends[1])
        for d, p in ((da, pa), (db, pb)):
            _check_port(scn, d, p, "link")
            if (d, p) in wired:
                raise ScenarioError(f"port {d}:{p} wired twice")
            wired.add((d, p))
        if find(da) == find(db):
            raise ScenarioError(f"link {da}:{pa} <-> {db}:{pb} closes a loop")
        parent[find(da)] = find(db)
        scn.links.append((da, pa, db, pb))
    elif head == "host":
        name, mac = words[1], _parse_mac(words[2])
        if words[3] != "at":
            raise ScenarioError("expected 'at'")
        dpid, port = _parse_endpoint(words[4])
        _check_port(scn, dpid, port, "host")
        if name in scn.hosts:
            raise ScenarioError(f"host {name} declared twice")
        if (dpid, port) in wired:
            raise ScenarioError(f"port {dpid}:{port} wired twice")
        wired.add((dpid, port))
        scn.hosts[name] = HostDecl(name, mac, dpid, port)
    elif head == "controllet":
        scn.controllets.append(_parse_controllet(words[1:]))
    elif head == "at":
        scn.steps.append(_parse_step(scn, float(words[1]), words[2:]))
    else:
        raise ScenarioError(f"unknown directive {head!r}")


def _parse_controllet(words: list[str]) -> ControlletDecl:
    kind = words[0]
    if kind not in ("learning-switch", "topology"):
        raise ScenarioError(f"unknown controllet kind {kind!r}")
    decl = ControlletDecl(kind=kind)
    i = 1
    while i < len(words):
        opt = words[i]
        if kind == "learning-switch" and opt == "lb-group":
            decl.lb_group = int(words[i + 1], 0)
            i += 2
        elif kind == "learning-switch" and opt == "lb-wildcard":
            decl.lb_group = None
            i += 1
        elif kind == "learning-switch" and opt == "work-us":
            decl.work_us = int(words[i + 1])
            i += 2
        elif kind == "learning-switch" and opt == "exec":
            decl.exec_cmd = words[i + 1]
            i += 2
        elif kind == "topology" and opt == "lldp-period":
            val = words[i + 1]
            if not val.endswith("ms"):
                raise ScenarioError("lldp-period takes milliseconds, e.g. 500ms")
            decl.lldp_period = int(val[:-2]) / 1000.0
            i += 2
        else:
            raise ScenarioError(f"unknown {kind} option {opt!r}")
    return decl


_OPS = {"==": lambda a, b: a == b, "<=": lambda a, b: a <= b, ">=": lambda a, b: a >= b}


def _parse_step(scn: Scenario, t: float, words: list[str]) -> Step:
    if t < 0:
        raise ScenarioError("negative time")
    verb = words[0]
    if verb == "send":
        if len(words) != 4 or words[2] != "->":
            raise ScenarioError("usage: send SRC -> DST")
        for host in (words[1], words[3]):
            if host not in scn.hosts:
                raise ScenarioError(f"unknown host {host!r}")
        return Step(t, "send", (words[1], words[3]), text=f"send {words[1]} -> {words[3]}")
    if verb == "kill-sa":
        dpid = int(words[1], 0)
        if dpid not in scn.switches:
            raise ScenarioError(f"unknown switch {dpid}")
        return Step(t, "kill-sa", (dpid,), text=f"kill-sa {dpid}")
    if verb == "expect":
        rest = words[1:]
        within = 2.0
        if len(rest) >= 2 and rest[-2] == "within":
            within = float(rest[-1])
            rest = rest[:-2]
        return Step(t, "expect", _parse_assertion(scn, rest), within=within,
                    text="expect " + " ".join(rest))
    raise ScenarioError(f"unknown step verb {verb!r}")


def _parse_assertion(scn: Scenario, words: list[str]) -> tuple:
    kind = words[0]
    if kind == "links" and words[1] in _OPS:
        return ("links", words[1], int(words[2]))
    if kind == "flows" and words[2] in _OPS:
        dpid = int(words[1], 0)
        if dpid not in scn.switches:
            raise ScenarioError(f"unknown switch {dpid}")
        return ("flows", dpid, words[2], int(words[3]))
    if kind == "packet-ins" and words[2] in _OPS:
        dpid = int(words[1], 0)
        if dpid not in scn.switches:
            raise ScenarioError(f"unknown switch {dpid}")
        return ("packet-ins", dpid, words[2], int(words[3]))
    if kind == "delivered" and words[2] in _OPS:
        if words[1] not in scn.hosts:
            raise ScenarioError(f"unknown host {words[1]!r}")
        return ("delivered", words[1], words[2], int(words[3]))
    if kind == "flow" and len(words) == 6 and words[2] == "dl_dst" and words[4] == "out":
        dpid = int(words[1], 0)
        if dpid not in scn.switches:
            raise ScenarioError(f"unknown switch {dpid}")
        mac = scn.hosts[words[3]].mac if words[3] in scn.hosts else _parse_mac(words[3])
        return ("flow", dpid, mac, int(words[5]))
    raise ScenarioError(f"unknown assertion {' '.join(words)!r}")


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_scenario(text, name=os.path.basename(path))


# --- running -----------------------------------------------------------------


@dataclass
class ScenarioResult:
    ok: bool
    transcript: list[str]
    failures: list[str]


def _kill_abruptly(controllet: Controllet) -> None:
    """Simulate process death: sockets die, no BYE, no unsubscribe."""
    controllet._stop.set()
    session = controllet.session
    if session is not None and session._sock is not None:
        try:
            session._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
    controllet._inbox.put(("stop",))


class _Run:
    """One scenario execution; everything it boots, it tears down."""

    def __init__(self, scn: Scenario, learning_exec: str | None, echo=None):
        self.scn = scn
        self.learning_exec = learning_exec
        self.echo = echo or (lambda line: None)
        self.rng = random.Random(scn.seed)
        self.broker: BrokerServer | None = None
        self.adapters: dict[int, SwitchAdapter] = {}
        self.mocks: dict[int, MockSwitch] = {}
        self.mailboxes: dict[str, list] = {}
        self.controllets: list[Controllet] = []
        self.procs: list[subprocess.Popen] = []
        self.observer: BusSession | None = None
        self.topology_id: int | None = None
        self.transcript: list[str] = []
        self.failures: list[str] = []
        self._seq = 0

    def log(self, line: str) -> None:
        self.transcript.append(line)
        self.echo(line)

    # -- boot -------------------------------------------------------------------

    def boot(self) -> None:
        scn = self.scn
        self.broker = BrokerServer(port=0).start()
        bus = self.broker.address
        lb_groups = scn.lb_groups()
        self.log(f"{scn.name}: switches={len(scn.switches)} links={len(scn.links)} "
                 f"hosts={len(scn.hosts)} controllets={len(scn.controllets)} seed={scn.seed}")

        for dpid, n_ports in sorted(scn.switches.items()):
            self._boot_switch(dpid, n_ports, lb_groups, bus)
        for (da, pa, db, pb) in scn.links:
            wire(self.mocks[da], pa, self.mocks[db], pb)
        for host in scn.hosts.values():
            self.mailboxes[host.name] = []
            attach_host(self.mocks[host.dpid], host.port, self.mailboxes[host.name])

        expect_learning = 0
        for decl in scn.controllets:
            if decl.kind == "topology":
                topo = TopologyControllet(lldp_period=decl.lldp_period, bus_addr=bus,
                                          instance_id=self.rng.getrandbits(64) or 1)
                self.controllets.append(topo.start())
                self.topology_id = topo.instance_id
            else:
                expect_learning += 1
                cmd = self.learning_exec or decl.exec_cmd
                if cmd:
                    self._spawn_exec(cmd, decl, bus)
                else:
                    ls = LearningSwitch(lb_group=decl.lb_group, work_us=decl.work_us,
                                        bus_addr=bus,
                                        instance_id=self.rng.getrandbits(64) or 1)
                    self.controllets.append(ls.start())

        self.observer = BusSession(bus).connect()
        self.observer.register(OBSERVER_TYPE, self.rng.getrandbits(64) or 1)
        for ct in self.controllets:
            if not ct.wait_active(10):
                raise ScenarioError(f"controllet {ct.controllet_type:#06x} never became active")
        if expect_learning:
            self._await_registry(tp.LEARNING_SWITCH, expect_learning)

    def _boot_switch(self, dpid: int, n_ports: int, lb_groups: int, bus: str) -> None:
        ready = threading.Event()
        holder: dict = {}

        def on_listening(host, port):
            holder["addr"] = f"127.0.0.1:{port}"
            ready.set()

        def acceptor():
            try:
                holder["adapter"] = accept_one_switch(
                    "127.0.0.1:0", lb_groups=lb_groups, bus_addr=bus,
                    on_listening=on_listening)
            except Exception as exc:  # surfaces via the join below
                holder["error"] = exc
                ready.set()

        t = threading.Thread(target=acceptor, name=f"sa-accept-{dpid:x}", daemon=True)
        t.start()
        if not ready.wait(10) or "error" in holder:
            raise ScenarioError(f"SA for switch {dpid} failed: {holder.get('error')}")
        mock = MockSwitch(dpid, tuple(range(1, n_ports + 1))).connect(holder["addr"])
        t.join(timeout=10)
        if "adapter" not in holder:
            raise ScenarioError(f"SA for switch {dpid} failed: {holder.get('error')}")
        adapter = holder["adapter"]
        adapter.start()
        if not adapter.wait_active(10):
            raise ScenarioError(f"SA for switch {dpid} never became active")
        self.adapters[dpid] = adapter
        self.mocks[dpid] = mock

    def _spawn_exec(self, cmd: str, decl: ControlletDecl, bus: str) -> None:
        env = dict(os.environ, ZSDN_BUS_ADDR=bus)
        argv = shlex.split(cmd)
        if decl.lb_group is not None:
            argv += ["--lb-group", str(decl.lb_group)]
        else:
            argv += ["--lb-wildcard"]
        self.procs.append(subprocess.Popen(argv, env=env))

    def _await_registry(self, ctype: int, count: int, timeout: float = 15.0) -> None:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            status, body = self.observer.request(BROKER_ID, bytes([OP_LIST]), timeout=5)
            if status == 0:
                live = sum(1 for t, _ in parse_registry_reply(body) if t == ctype)
                if live >= count:
                    return
            time.sleep(0.1)
        raise ScenarioError(f"{count} controllet(s) of type {ctype:#06x} never registered")

    # -- the script ---------------------------------------------------------------

    def execute(self) -> None:
        t0 = time.monotonic()
        for step in self.scn.steps:
            delay = t0 + step.t - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            if step.kind == "send":
                self._do_send(step)
            elif step.kind == "kill-sa":
                self._do_kill(step)
            else:
                self._do_expect(step)

    def _do_send(self, step: Step) -> None:
        src, dst = (self.scn.hosts[n] for n in step.args)
        self._seq += 1
        payload = struct.pack("!I", self._seq).ljust(28, b"\x00")
        frame = of.ethernet_frame(dst.mac, src.mac, tp.ETH_ARP, payload)
        self.mocks[src.dpid].inject(src.port, frame)
        self.log(f"[t={step.t:g}] {step.text}")

    def _do_kill(self, step: Step) -> None:
        dpid = step.args[0]
        adapter = self.adapters[dpid]
        _kill_abruptly(adapter)
        self.mocks[dpid].stop()
        self.log(f"[t={step.t:g}] {step.text}")

    def _do_expect(self, step: Step) -> None:
        deadline = time.monotonic() + step.within
        while True:
            ok, got = self._evaluate(step.args)
            if ok or time.monotonic() > deadline:
                break
            time.sleep(0.05)
        if ok:
            self.log(f"[t={step.t:g}] PASS {step.text}")
        else:
            line = f"[t={step.t:g}] FAIL {step.text} (got {got})"
            self.log(line)
            self.failures.append(line)

    def _evaluate(self, assertion: tuple) -> tuple[bool, str]:
        kind = assertion[0]
        if kind == "links":
            _, op, n = assertion
            if self.topology_id is None:
                return False, "no topology controllet in scenario"
            try:
                status, body = self.observer.request(self.topology_id, bytes([OP_LINKS]),
                                                     timeout=5)
            except BusError as exc:
                return False, f"LINKS request failed: {exc}"
            if status != 0:
                return False, f"LINKS status {status}"
            got = len(parse_links_reply(body))
            return _OPS[op](got, n), str(got)
        if kind == "flows":
            _, dpid, op, n = assertion
            got = len(self.mocks[dpid].state.flow_table)
            return _OPS[op](got, n), str(got)
        if kind == "packet-ins":
            _, dpid, op, n = assertion
            got = self.mocks[dpid].state.counters.packet_ins
            return _OPS[op](got, n), str(got)
        if kind == "delivered":
            _, host, op, n = assertion
            got = len(self.mailboxes[host])
            return _OPS[op](got, n), str(got)
        if kind == "flow":
            _, dpid, mac, out_port = assertion
            entries = [e for e in self.mocks[dpid].state.flow_table
                       if e.match == of.Match10.exact_dl_dst(mac)]
            hits = [e for e in entries if e.actions == (of.OutputAction(out_port),)]
            return (len(hits) == 1 and len(entries) == 1,
                    f"{len(entries)} dl_dst entries, {len(hits)} with Output({out_port})")
        raise ScenarioError(f"unknown assertion {assertion!r}")

    # -- teardown -----------------------------------------------------------------

    def teardown(self) -> None:
        for proc in self.procs:
            proc.terminate()
        for proc in self.procs:
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
        for ct in self.controllets:
            ct.stop()
        if self.observer is not None:
            self.observer.close()
        for adapter in self.adapters.values():
            adapter.stop()
        for mock in self.mocks.values():
            mock.stop()
        if self.broker is not None:
            self.broker.shutdown()


def run_scenario(scn: Scenario, *, learning_exec: str | None = None,
                 echo=None) -> ScenarioResult:
    run = _Run(scn, learning_exec, echo)
    try:
        run.boot()
        run.execute()
    except ScenarioError as exc:
        run.failures.append(str(exc))
        run.log(f"ERROR {exc}")
    finally:
        run.teardown()
    ok = not run.failures
    run.log("RESULT " + ("pass" if ok else f"FAIL ({len(run.failures)} failed)"))
    return ScenarioResult(ok, run.transcript, run.failures)


def run_scenario_file(path: str, *, learning_exec: str | None = None,
                      echo=print) -> int:
    """CLI entry: 0 on pass, 1 on any failure."""
    try:
        scn = load_scenario(path)
    except (OSError, ScenarioError) as exc:
        echo(f"ERROR {exc}")
        return 1
    result = run_scenario(scn, learning_exec=learning_exec, echo=echo)
    return 0 if result.ok else 1
