"""The zsdn command line: broker, adapters, controllets, and the harness.

Every networked subcommand takes --bus (falling back to $ZSDN_BUS_ADDR, then
127.0.0.1:7633).  Long-running subcommands stop cleanly on Ctrl-C.
"""

from __future__ import annotations

import argparse
import sys
import threading

from zsdn.bus.broker import BrokerServer
from zsdn.bus.client import DEFAULT_BUS_ADDR, default_bus_addr, parse_addr
from zsdn.controllets.learning_switch import LearningSwitch
from zsdn.controllets.topology import TopologyControllet
from zsdn.harness.bench import BenchError, bench_run
from zsdn.harness.mock_switch import MockSwitch
from zsdn.harness.scenario import run_scenario_file
from zsdn.switch_adapter import DEFAULT_OF_LISTEN, accept_one_switch


def _hex_int(value: str) -> int:
    return int(value, 0) if value.startswith(("0x", "0X")) else int(value, 16)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zsdn",
                                     description="Distributed SDN control plane tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("broker", help="run the message broker")
    p.add_argument("--listen", default=DEFAULT_BUS_ADDR, metavar="HOST:PORT")

    p = sub.add_parser("sa", help="run a SwitchAdapter for one switch")
    p.add_argument("--listen", default=DEFAULT_OF_LISTEN, metavar="HOST:PORT",
                   help="OpenFlow listening address (default %(default)s)")
    p.add_argument("--lb-groups", type=int, default=1, metavar="K",
                   help="number of LB groups to shard PACKET_INs over")
    p.add_argument("--bus", default=None, metavar="HOST:PORT")

    p = sub.add_parser("controllet", help="run a control application")
    csub = p.add_subparsers(dest="kind", required=True)

    ls = csub.add_parser("learning-switch", help="L2 learning switch")
    group = ls.add_mutually_exclusive_group()
    group.add_argument("--lb-group", type=int, default=0, metavar="K")
    group.add_argument("--lb-wildcard", action="store_true",
                       help="subscribe to every LB group")
    ls.add_argument("--work-us", type=int, default=0, metavar="N",
                    help="modelled per-packet work in microseconds")
    ls.add_argument("--instance-id", type=_hex_int, default=None, metavar="HEX")
    ls.add_argument("--bus", default=None, metavar="HOST:PORT")

    topo = csub.add_parser("topology", help="LLDP link discovery")
    topo.add_argument("--lldp-period", type=int, default=1000, metavar="MS")
    topo.add_argument("--instance-id", type=_hex_int, default=None, metavar="HEX")
    topo.add_argument("--bus", default=None, metavar="HOST:PORT")

    p = sub.add_parser("mock-switch", help="software OpenFlow switch")
    p.add_argument("--dpid", type=_hex_int, required=True, metavar="HEX")
    p.add_argument("--connect", required=True, metavar="HOST:PORT",
                   help="the SwitchAdapter's OpenFlow address")
    p.add_argument("--ports", type=int, default=2, metavar="N")
    p.add_argument("--inject", action="append", default=[], metavar="T:PORT:HEXFRAME",
                   help="inject a frame after T seconds (repeatable)")

    p = sub.add_parser("run-scenario", help="execute a scenario file")
    p.add_argument("file")
    p.add_argument("--learning-exec", default=None, metavar="CMD",
                   help="command to run instead of the built-in learning switch")

    p = sub.add_parser("bench", help="PACKET_IN throughput benchmark")
    p.add_argument("--switches", type=int, default=16, metavar="N")
    p.add_argument("--replicas", type=int, default=1, metavar="R")
    p.add_argument("--duration", type=float, default=10.0, metavar="S")
    p.add_argument("--open-loop", action="store_true",
                   help="windowed injection instead of one-at-a-time")
    p.add_argument("--count", type=int, default=10_000, metavar="N",
                   help="total PACKET_INs in closed-loop mode")
    p.add_argument("--work-us", type=int, default=200, metavar="N")
    p.add_argument("--window", type=int, default=32, metavar="N")

    return parser


def _wait_forever() -> None:
    threading.Event().wait()


def cmd_broker(args) -> int:
    host, port = parse_addr(args.listen)
    server = BrokerServer(host, port).start()
    print(f"broker listening on {server.address}")
    try:
        _wait_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def cmd_sa(args) -> int:
    bus = args.bus or default_bus_addr()

    def on_listening(host, port):
        print(f"sa waiting for a switch on {host}:{port} (bus {bus})")

    adapter = accept_one_switch(args.listen, lb_groups=args.lb_groups,
                                bus_addr=bus, on_listening=on_listening)
    print(f"sa serving dpid {adapter.sa.datapath_id:#x}, "
          f"ports {adapter.sa.port_numbers()}")
    try:
        adapter.run()
    except KeyboardInterrupt:
        pass
    finally:
        adapter.stop()
    return 0


def cmd_controllet(args) -> int:
    bus = args.bus or default_bus_addr()
    if args.kind == "learning-switch":
        controllet = LearningSwitch(
            lb_group=None if args.lb_wildcard else args.lb_group,
            work_us=args.work_us, instance_id=args.instance_id, bus_addr=bus)
    else:
        controllet = TopologyControllet(
            lldp_period=args.lldp_period / 1000.0,
            instance_id=args.instance_id, bus_addr=bus)
    print(f"{args.kind} controllet {controllet.instance_id:#x} on bus {bus}")
    try:
        controllet.run()
    except KeyboardInterrupt:
        pass
    finally:
        controllet.stop()
    return 0


def cmd_mock_switch(args) -> int:
    injections = []
    for spec in args.inject:
        delay, port, hexframe = spec.split(":", 2)
        injections.append((float(delay), int(port), bytes.fromhex(hexframe)))
    mock = MockSwitch(args.dpid, tuple(range(1, args.ports + 1)))
    mock.connect(args.connect)
    print(f"mock switch {args.dpid:#x} connected to {args.connect}")
    for delay, port, frame in injections:
        threading.Timer(delay, mock.inject, (port, frame)).start()
    try:
        _wait_forever()
    except KeyboardInterrupt:
        pass
    finally:
        mock.stop()
        c = mock.state.counters
        print(f"packet-ins={c.packet_ins} flow-mods={c.flow_mods} "
              f"packet-outs={c.packet_outs} forwarded={c.forwarded} "
              f"dropped={c.dropped} errors={c.errors}")
    return 0


def cmd_run_scenario(args) -> int:
    return run_scenario_file(args.file, learning_exec=args.learning_exec)


def cmd_bench(args) -> int:
    try:
        bench_run(switches=args.switches, replicas=args.replicas,
                  duration=args.duration, open_loop=args.open_loop,
                  count=args.count, work_us=args.work_us,
                  window=args.window, echo=print)
    except BenchError as exc:
        print(f"bench failed: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "broker": cmd_broker,
        "sa": cmd_sa,
        "controllet": cmd_controllet,
        "mock-switch": cmd_mock_switch,
        "run-scenario": cmd_run_scenario,
        "bench": cmd_bench,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
