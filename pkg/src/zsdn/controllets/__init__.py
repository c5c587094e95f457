"""Control applications built on the controllet kernel."""

from zsdn.controllets.learning_switch import LearningSwitch, MacTable, learning_step
from zsdn.controllets.topology import LinkGraph, TopologyControllet

__all__ = [
    "LearningSwitch",
    "MacTable",
    "learning_step",
    "LinkGraph",
    "TopologyControllet",
]
