"""CLI parsing plus one real multi-process pipeline run."""

import os
import socket
import subprocess
import sys
import time

import pytest

from zsdn import ofcodec as of
from zsdn import topic as tp
from zsdn.bus.broker import OP_STATS
from zsdn.bus.client import BusSession
from zsdn.cli import build_parser, main
from zsdn.harness.mock_switch import MockSwitch
from zsdn.kernel import LIFECYCLE_WATCH


class TestParser:
    def test_broker_defaults(self):
        args = build_parser().parse_args(["broker"])
        assert args.listen == "127.0.0.1:7633"

    def test_sa_flags(self):
        args = build_parser().parse_args(
            ["sa", "--listen", "0.0.0.0:6653", "--lb-groups", "4", "--bus", "h:1"])
        assert (args.listen, args.lb_groups, args.bus) == ("0.0.0.0:6653", 4, "h:1")

    def test_learning_switch_flags(self):
        args = build_parser().parse_args(
            ["controllet", "learning-switch", "--lb-group", "2",
             "--work-us", "100", "--instance-id", "0xAB"])
        assert args.kind == "learning-switch"
        assert args.lb_group == 2 and args.work_us == 100 and args.instance_id == 0xAB

    def test_lb_wildcard_excludes_lb_group(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(
                ["controllet", "learning-switch", "--lb-group", "1", "--lb-wildcard"])

    def test_topology_period(self):
        args = build_parser().parse_args(
            ["controllet", "topology", "--lldp-period", "250"])
        assert args.kind == "topology" and args.lldp_period == 250

    def test_mock_switch_hex_dpid(self):
        args = build_parser().parse_args(
            ["mock-switch", "--dpid", "1A", "--connect", "127.0.0.1:6633"])
        assert args.dpid == 0x1A

    def test_bench_flags(self):
        args = build_parser().parse_args(
            ["bench", "--switches", "4", "--replicas", "2", "--duration", "1.5",
             "--open-loop"])
        assert (args.switches, args.replicas, args.duration, args.open_loop) == \
            (4, 2, 1.5, True)

    def test_run_scenario_exec_override(self):
        args = build_parser().parse_args(
            ["run-scenario", "x.scn", "--learning-exec", "node ls.js"])
        assert args.learning_exec == "node ls.js"


class TestMainDispatch:
    def test_run_scenario_failing_file_exits_one(self, tmp_path):
        path = tmp_path / "t.scn"
        path.write_text("switch 1 ports 1\n"
                        "host A 0a:00:00:00:00:01 at 1:1\n"
                        "at 0 expect delivered A == 9 within 0.1\n")
        assert main(["run-scenario", str(path)]) == 1

    def test_run_scenario_missing_file_exits_one(self, capsys):
        assert main(["run-scenario", "/nonexistent.scn"]) == 1
        assert "ERROR" in capsys.readouterr().out

    def test_bench_bad_count_exits_one(self, capsys):
        assert main(["bench", "--switches", "3", "--replicas", "1",
                     "--count", "100", "--work-us", "0"]) == 1
        assert "bench failed" in capsys.readouterr().err


def _spawn(args, **kwargs):
    return subprocess.Popen([sys.executable, "-m", "zsdn.cli", *args],
                            stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
                            text=True, **kwargs)


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class TestProcessPipeline:
    """broker, SA, and learning switch as real processes; mock switch in-test."""

    def test_full_pipeline_across_processes(self):
        bus_port = _free_port()
        of_port = _free_port()
        bus = f"127.0.0.1:{bus_port}"
        env = dict(os.environ, ZSDN_BUS_ADDR=bus)
        procs = []
        watcher = None
        mock = None
        try:
            procs.append(_spawn(["broker", "--listen", bus]))
            _await_port(bus_port)
            procs.append(_spawn(["controllet", "learning-switch", "--lb-group", "0",
                                 "--instance-id", "CC"], env=env))
            procs.append(_spawn(["sa", "--listen", f"127.0.0.1:{of_port}"], env=env))

            # the SA accepts exactly one connection, so connect by retrying the
            # real handshake rather than probing the port
            deadline = time.monotonic() + 10
            while True:
                try:
                    mock = MockSwitch(0x77, (1, 2)).connect(f"127.0.0.1:{of_port}")
                    break
                except OSError:
                    if time.monotonic() > deadline:
                        raise
                    time.sleep(0.1)
            watcher = BusSession(bus).connect()
            watcher.register(0x00EE, 0xEE, to_patterns=(LIFECYCLE_WATCH,))

            # unknown destination -> the learning switch floods it back
            frame = of.ethernet_frame(b"\xff" * 6, b"\x0a\x00\x00\x00\x00\x01",
                                      0x0806, b"\x00" * 28)
            deadline = time.monotonic() + 15
            mock.inject(1, frame)
            while time.monotonic() < deadline and mock.ctrl_msgs == 0:
                time.sleep(0.1)
                mock.inject(1, frame)  # retried until the controllet subscribed
            assert mock.ctrl_msgs > 0

            status, body = watcher.request(0xCC, bytes([OP_STATS]), timeout=5)
            assert status == 0
            assert int.from_bytes(body, "big") >= 1

            # SIGKILL the controllet process: its LEAVE must reach the bus
            procs[1].kill()
            deadline = time.monotonic() + 6
            saw_leave = False
            while time.monotonic() < deadline:
                item = watcher.next_event(timeout=6)
                if item is None:
                    break
                topic, payload = item
                if topic == tp.encode_lifecycle_topic(0x02) and payload.endswith(
                        (0xCC).to_bytes(8, "big")):
                    saw_leave = True
                    break
            assert saw_leave
        finally:
            if watcher is not None:
                watcher.close()
            if mock is not None:
                mock.stop()
            for proc in procs:
                proc.kill()
            for proc in procs:
                proc.wait(timeout=10)


def _await_port(port: int, timeout: float = 10.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        try:
            socket.create_connection(("127.0.0.1", port), timeout=1).close()
            return
        except OSError:
            time.sleep(0.05)
    raise TimeoutError(f"nothing listening on {port}")
