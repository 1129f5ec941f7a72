"""Clustered lifetime-maximizing aggregation trees for sensor-network data delivery.

Pipeline: Gaussian-mixture clustering of node positions, per-cluster
aggregation tree selection, FDMA band management and hybrid TDMA/FDMA
scheduling, driven by a deterministic discrete-event simulator.
"""

from dlmtc.model import (
    Node,
    NodeRole,
    NodeState,
    Scenario,
    ScenarioParams,
    ClusterAssignment,
    disk_graph,
    generate_scenario,
)

__all__ = [
    "Node",
    "NodeRole",
    "NodeState",
    "Scenario",
    "ScenarioParams",
    "ClusterAssignment",
    "disk_graph",
    "generate_scenario",
]

__version__ = "0.1.0"
