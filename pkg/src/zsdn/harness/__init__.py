"""Desk-scale verification tools: mock switch, scenario runner, benchmark."""

from zsdn.harness.bench import BenchError, BenchReport, bench_run
from zsdn.harness.mock_switch import MockSwitch, MockSwitchState, attach_host, wire
from zsdn.harness.scenario import (
    Scenario,
    ScenarioError,
    ScenarioResult,
    load_scenario,
    parse_scenario,
    run_scenario,
    run_scenario_file,
)

__all__ = [
    "BenchError",
    "BenchReport",
    "bench_run",
    "MockSwitch",
    "MockSwitchState",
    "attach_host",
    "wire",
    "Scenario",
    "ScenarioError",
    "ScenarioResult",
    "load_scenario",
    "parse_scenario",
    "run_scenario",
    "run_scenario_file",
]
