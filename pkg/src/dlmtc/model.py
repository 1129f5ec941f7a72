"""Core domain types: nodes, scenarios, cluster assignments and the disk graph."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np

# Sinks never run out; they are excluded from every energy ledger.
SINK_ENERGY = 1.0e9


class NodeRole(str, Enum):
    SOURCE = "source"
    RELAY = "relay"
    SINK = "sink"
    SUBSINK = "subsink"


class NodeState(str, Enum):
    SLEEP = "sleep"
    LPL = "lpl"
    AWAKE_LISTEN = "awake_listen"
    AWAKE_TRANSMIT = "awake_transmit"
    DEAD = "dead"


class ScenarioError(ValueError):
    """Raised for invalid scenario parameters or infeasible deployments."""


@dataclass(frozen=True)
class Node:
    id: int
    position: tuple[float, float]
    residual_energy: float
    role: NodeRole
    radio_range: float
    state: NodeState = NodeState.LPL

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ScenarioError(f"node id must be non-negative, got {self.id}")
        if self.residual_energy < 0:
            raise ScenarioError(f"node {self.id}: negative residual energy")
        dead = self.state is NodeState.DEAD
        if dead != (self.residual_energy == 0):
            raise ScenarioError(f"node {self.id}: state dead iff residual energy is 0")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "position": [self.position[0], self.position[1]],
            "residual_energy": self.residual_energy,
            "role": self.role.value,
            "radio_range": self.radio_range,
            "state": self.state.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        return cls(
            id=int(d["id"]),
            position=(float(d["position"][0]), float(d["position"][1])),
            residual_energy=float(d["residual_energy"]),
            role=NodeRole(d["role"]),
            radio_range=float(d["radio_range"]),
            state=NodeState(d["state"]),
        )


@dataclass(frozen=True)
class ScenarioParams:
    """Deployment, traffic and energy parameters.

    Powers are in milliwatts, energies in joules, times in seconds.
    """

    num_nodes: int
    num_sinks: int = 5
    source_ratio: float = 0.10
    node_density: float = 55 / 1652
    radio_range: float = 45.0
    report_size: int = 138
    report_rate: float = 1.0
    start_jitter: float = 5.0
    source_energy_range: tuple[float, float] = (10.0, 18.0)
    idle_power: float = 40.0
    rx_power: float = 400.0
    tx_power: float = 680.0
    link_rate: float = 1.6e6
    energy_log_interval: float = 0.55
    relay_energy_margin: float = 10.0
    max_source_attempts: int = 20000

    def validate(self) -> None:
        if self.num_nodes <= 0:
            raise ScenarioError("num_nodes must be positive")
        if self.num_sinks < 1:
            raise ScenarioError("num_sinks must be at least 1")
        if not 0 < self.source_ratio < 1:
            raise ScenarioError("source_ratio must lie in (0, 1)")
        if self.node_density <= 0 or self.radio_range <= 0:
            raise ScenarioError("node_density and radio_range must be positive")
        lo, hi = self.source_energy_range
        if not 0 < lo <= hi:
            raise ScenarioError("source_energy_range must satisfy 0 < lo <= hi")
        if self.report_size <= 0 or self.report_rate <= 0 or self.link_rate <= 0:
            raise ScenarioError("traffic parameters must be positive")
        if self.start_jitter < 0 or self.energy_log_interval <= 0:
            raise ScenarioError("timing parameters out of range")
        if self.relay_energy_margin <= 0:
            raise ScenarioError("relay_energy_margin must be positive")

    @property
    def field_side(self) -> float:
        return math.sqrt(self.num_nodes / self.node_density)

    @property
    def num_sources(self) -> int:
        # guard against 0.1 * 300 == 30.000000000000004
        return max(1, math.ceil(self.source_ratio * self.num_nodes - 1e-9))

    @property
    def airtime(self) -> float:
        """Seconds on air for one report."""
        return 8.0 * self.report_size / self.link_rate

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source_energy_range"] = list(self.source_energy_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioParams":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known}
        if "source_energy_range" in kwargs:
            lo, hi = kwargs["source_energy_range"]
            kwargs["source_energy_range"] = (float(lo), float(hi))
        return cls(**kwargs)


@dataclass(frozen=True)
class Scenario:
    params: ScenarioParams
    seed: int | None
    field_side: float
    nodes: tuple[Node, ...]
    report_start: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise ScenarioError("node ids must be dense 0..N-1 in order")
        for sid in self.report_start:
            if self.nodes[sid].role is not NodeRole.SOURCE:
                raise ScenarioError(f"report start given for non-source {sid}")

    __hash__ = None  # type: ignore[assignment]

    @property
    def sinks(self) -> list[int]:
        return [n.id for n in self.nodes if n.role is NodeRole.SINK]

    @property
    def sources(self) -> list[int]:
        return [n.id for n in self.nodes if n.role is NodeRole.SOURCE]

    @property
    def sensors(self) -> list[int]:
        """All non-sink nodes."""
        return [n.id for n in self.nodes if n.role is not NodeRole.SINK]

    @property
    def positions(self) -> np.ndarray:
        return np.array([n.position for n in self.nodes], dtype=float)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "seed": self.seed,
            "field_side": self.field_side,
            "nodes": [n.to_dict() for n in self.nodes],
            "report_start": {str(k): v for k, v in sorted(self.report_start.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            params=ScenarioParams.from_dict(d["params"]),
            seed=d["seed"],
            field_side=float(d["field_side"]),
            nodes=tuple(Node.from_dict(n) for n in d["nodes"]),
            report_start={int(k): float(v) for k, v in d["report_start"].items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class ClusterAssignment:
    k: int
    membership: dict[int, int]
    centroids: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.centroids) != self.k:
            raise ValueError("one centroid per cluster required")
        sizes = [0] * self.k
        for c in self.membership.values():
            if not 0 <= c < self.k:
                raise ValueError(f"cluster index {c} out of range")
            sizes[c] += 1
        if any(s == 0 for s in sizes):
            raise ValueError("every cluster must be non-empty")

    __hash__ = None  # type: ignore[assignment]

    def members(self, cluster: int) -> list[int]:
        return sorted(n for n, c in self.membership.items() if c == cluster)


def adjacency_matrix(positions: np.ndarray, radio_range: float) -> np.ndarray:
    """Boolean matrix, True where two distinct nodes are within radio range."""
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    adj = dist <= radio_range
    np.fill_diagonal(adj, False)
    return adj


def disk_graph(scenario: Scenario) -> dict[int, frozenset[int]]:
    """Undirected radio-range neighbourhoods over all nodes, sinks included."""
    adj = adjacency_matrix(scenario.positions, scenario.params.radio_range)
    return {i: frozenset(np.flatnonzero(adj[i]).tolist()) for i in range(len(adj))}


def is_connected(nodes: list[int], adj: np.ndarray) -> bool:
    if not nodes:
        return True
    wanted = set(nodes)
    seen = {nodes[0]}
    queue = deque([nodes[0]])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if v in wanted and v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == len(wanted)


def generate_scenario(params: ScenarioParams, seed: int) -> Scenario:
    """Random deployment per the experimental setup; pure in (params, seed)."""
    params.validate()
    rng = np.random.default_rng(seed)
    side = params.field_side
    n = params.num_nodes
    sensor_pos = rng.uniform(0.0, side, size=(n, 2))
    sink_pos = rng.uniform(0.0, side, size=(params.num_sinks, 2))
    adj = adjacency_matrix(sensor_pos, params.radio_range)

    n_src = params.num_sources
    sources = None
    for _ in range(params.max_source_attempts):
        pick = sorted(int(i) for i in rng.choice(n, size=n_src, replace=False))
        if is_connected(pick, adj):
            sources = pick
            break
    if sources is None:
        raise ScenarioError(
            f"no connected source set after {params.max_source_attempts} attempts; "
            "density too low for the radio range"
        )

    lo, hi = params.source_energy_range
    source_energy = rng.uniform(lo, hi, size=n_src)
    starts = rng.uniform(0.0, params.start_jitter, size=n_src)
    energy = {s: float(e) for s, e in zip(sources, source_energy)}
    relay_energy = hi + params.relay_energy_margin

    nodes = []
    for i in range(n):
        is_src = i in energy
        nodes.append(
            Node(
                id=i,
                position=(float(sensor_pos[i, 0]), float(sensor_pos[i, 1])),
                residual_energy=energy[i] if is_src else relay_energy,
                role=NodeRole.SOURCE if is_src else NodeRole.RELAY,
                radio_range=params.radio_range,
            )
        )
    for j in range(params.num_sinks):
        nodes.append(
            Node(
                id=n + j,
                position=(float(sink_pos[j, 0]), float(sink_pos[j, 1])),
                residual_energy=SINK_ENERGY,
                role=NodeRole.SINK,
                radio_range=params.radio_range,
            )
        )
    return Scenario(
        params=params,
        seed=seed,
        field_side=side,
        nodes=tuple(nodes),
        report_start={s: float(t) for s, t in zip(sources, starts)},
    )


def build_scenario(
    positions: list[tuple[float, float]],
    roles: list[NodeRole],
    energies: list[float] | None = None,
    params: ScenarioParams | None = None,
    report_start: dict[int, float] | None = None,
    field_side: float | None = None,
) -> Scenario:
    """Hand-built scenario for fixtures and small experiments.

    Nodes keep the given order; sources default to a first report at t=0.
    """
    params = params or ScenarioParams(num_nodes=sum(r is not NodeRole.SINK for r in roles))
    lo, hi = params.source_energy_range
    nodes = []
    for i, (pos, role) in enumerate(zip(positions, roles)):
        if energies is not None:
            e = energies[i]
        elif role is NodeRole.SINK:
            e = SINK_ENERGY
        elif role is NodeRole.SOURCE:
            e = hi
        else:
            e = hi + params.relay_energy_margin
        nodes.append(Node(i, (float(pos[0]), float(pos[1])), float(e), role, params.radio_range))
    if report_start is None:
        report_start = {i: 0.0 for i, r in enumerate(roles) if r is NodeRole.SOURCE}
    if field_side is None:
        field_side = max([max(p) for p in positions] + [1.0])
    return Scenario(params, None, float(field_side), tuple(nodes), dict(report_start))
