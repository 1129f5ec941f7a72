"""Per-cluster aggregation trees and sub-sink selection.

Every cluster member is tried as a root. A candidate tree is grown greedily:
each joining node hangs off the in-tree neighbour with the most residual
energy. Candidates are then compared with a five-rule lexicographic test
(coverage, total energy, depth, root energy and sink distance, root id) and
the winner's root becomes the cluster's sub-sink.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class TreeSummary:
    rows: int
    total_energy: float
    depth: int
    root_energy: float
    root_sink_distance: float
    root_index: int

    def __post_init__(self) -> None:
        if self.rows < 1 or self.depth < 0:
            raise TreeError("summary needs rows >= 1 and depth >= 0")
        if self.total_energy < 0 or self.root_energy < 0:
            raise TreeError("energies must be non-negative")


@dataclass(frozen=True)
class CandidateTree:
    cluster: int
    root: int
    parent: dict[int, int | None]
    summary: TreeSummary
    order: tuple[int, ...] = ()  # attachment order, root first

    __hash__ = None  # type: ignore[assignment]

    @property
    def nodes(self) -> list[int]:
        return sorted(self.parent)

    def children(self) -> dict[int, list[int]]:
        kids: dict[int, list[int]] = {v: [] for v in self.parent}
        for v, p in self.parent.items():
            if p is not None:
                kids[p].append(v)
        for v in kids:
            kids[v].sort()
        return kids

    def heights(self) -> dict[int, int]:
        h = {self.root: 0}
        for v in self.order[1:]:
            h[v] = h[self.parent[v]] + 1
        return h

    def path_to_root(self, v: int) -> list[int]:
        path = [v]
        while self.parent[path[-1]] is not None:
            path.append(self.parent[path[-1]])
        return path

    def to_dot(self, positions: Mapping[int, tuple[float, float]] | None = None) -> str:
        lines = [f"digraph cluster_{self.cluster} {{"]
        for v in self.nodes:
            attrs = ['shape=doublecircle' if v == self.root else 'shape=circle']
            if positions is not None:
                x, y = positions[v]
                attrs.append(f'pos="{x:.2f},{y:.2f}!"')
            lines.append(f"  n{v} [label=\"{v}\" {' '.join(attrs)}];")
        for v in self.nodes:
            p = self.parent[v]
            if p is not None:
                lines.append(f"  n{v} -> n{p};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _nearest_sink_distance(root: int, positions, sink_positions) -> float:
    if positions is None or sink_positions is None or len(sink_positions) == 0:
        return math.inf
    x, y = positions[root]
    sinks = np.asarray(sink_positions, dtype=float).reshape(-1, 2)
    # scalar hypot: the comparator tests distances for exact equality
    return min(math.hypot(float(sx) - x, float(sy) - y) for sx, sy in sinks)


def build_candidate_tree(
    cluster_members: Iterable[int],
    energies: Mapping[int, float],
    adjacency: Mapping[int, Iterable[int]],
    root: int,
    *,
    cluster: int = 0,
    positions: Mapping[int, tuple[float, float]] | None = None,
    sink_positions=None,
) -> CandidateTree:
    """Grow a max-residual-energy-parent tree from ``root`` over the cluster.

    Only the root's connected component inside the cluster is covered. At each
    step the unattached member whose best in-tree neighbour has the most
    energy joins (ties: lower member id); its parent is that neighbour (ties:
    lower parent id).
    """
    members = set(cluster_members)
    if root not in members:
        raise TreeError(f"root {root} is not a cluster member")

    parent: dict[int, int | None] = {root: None}
    depth = {root: 0}
    order = [root]
    best: dict[int, int] = {}

    def offer(v: int, p: int) -> None:
        q = best.get(v)
        if q is None or energies[p] > energies[q] or (energies[p] == energies[q] and p < q):
            best[v] = p

    for v in adjacency[root]:
        if v in members and v != root:
            offer(v, root)

    while best:
        v = min(best, key=lambda u: (-energies[best[u]], u))
        p = best.pop(v)
        parent[v] = p
        depth[v] = depth[p] + 1
        order.append(v)
        for w in adjacency[v]:
            if w in members and w not in parent:
                offer(w, v)

    summary = TreeSummary(
        rows=len(parent),
        total_energy=math.fsum(energies[v] for v in sorted(parent)),
        depth=max(depth.values()),
        root_energy=energies[root],
        root_sink_distance=_nearest_sink_distance(root, positions, sink_positions),
        root_index=root,
    )
    return CandidateTree(cluster, root, parent, summary, tuple(order))


def best_dlmtc(i: TreeSummary, j: TreeSummary) -> bool:
    """True when candidate ``j`` beats candidate ``i``."""
    if j.rows != i.rows:
        return j.rows > i.rows
    if j.total_energy != i.total_energy:
        return j.total_energy > i.total_energy
    if j.depth != i.depth:
        return j.depth < i.depth
    if j.root_energy > i.root_energy and j.root_sink_distance < i.root_sink_distance:
        return True
    return (
        j.root_energy == i.root_energy
        and j.root_sink_distance == i.root_sink_distance
        and j.root_index < i.root_index
    )


def candidate_trees(
    cluster_members: Iterable[int],
    energies: Mapping[int, float],
    adjacency: Mapping[int, Iterable[int]],
    *,
    cluster: int = 0,
    positions=None,
    sink_positions=None,
) -> list[CandidateTree]:
    return [
        build_candidate_tree(cluster_members, energies, adjacency, r, cluster=cluster,
                             positions=positions, sink_positions=sink_positions)
        for r in sorted(set(cluster_members))
    ]


def select_subsink(
    cluster_members: Iterable[int],
    energies: Mapping[int, float],
    adjacency: Mapping[int, Iterable[int]],
    sink_positions,
    positions: Mapping[int, tuple[float, float]] | None = None,
    *,
    cluster: int = 0,
) -> CandidateTree:
    """Fold the comparator over all roots in ascending id order."""
    members = sorted(set(cluster_members))
    if not members:
        raise TreeError("cannot select a sub-sink for an empty cluster")
    best = None
    for tree in candidate_trees(members, energies, adjacency, cluster=cluster,
                                positions=positions, sink_positions=sink_positions):
        if best is None or best_dlmtc(best.summary, tree.summary):
            best = tree
    return best


def validate_tree(tree: CandidateTree, adjacency: Mapping[int, Iterable[int]]) -> list[str]:
    """Structural problems with a tree: cycles, dangling parents, non-edges."""
    problems = []
    roots = [v for v, p in tree.parent.items() if p is None]
    if roots != [tree.root]:
        problems.append(f"expected single root {tree.root}, found {roots}")
    for v, p in tree.parent.items():
        if p is None:
            continue
        if p not in tree.parent:
            problems.append(f"parent {p} of {v} not in tree")
        elif p not in set(adjacency[v]):
            problems.append(f"edge {v}->{p} not in disk graph")
    for v in tree.parent:
        seen = set()
        u = v
        while u is not None and u not in seen:
            seen.add(u)
            u = tree.parent.get(u)
        if u is not None:
            problems.append(f"cycle through {v}")
            break
    return problems
