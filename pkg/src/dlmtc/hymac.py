"""Hybrid TDMA/FDMA slot and channel assignment over an aggregation tree.

Nodes are visited breadth-first from the tree root. A node starts at its
level's default slot on channel 0 and is then moved away from every
already-visited node of the same height within two radio hops: siblings are
separated in time, everyone else on a different channel of the same slot,
falling back to a later slot once the channels run out. Finally the slots are
inverted so that each node transmits before its parent, letting a whole
aggregation wave reach the root in one cycle.
"""

from __future__ import annotations

import csv
from collections import deque
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, replace
from pathlib import Path

from dlmtc.tree import CandidateTree


@dataclass(frozen=True)
class Schedule:
    slot: dict[int, int]
    channel: dict[int, int]
    t_max: int
    height: dict[int, int]
    available_channels: int
    parent: dict[int, int | None]
    cluster: int = 0
    inverted: bool = False

    __hash__ = None  # type: ignore[assignment]

    @property
    def nodes(self) -> list[int]:
        return sorted(self.slot)

    def to_rows(self) -> list[dict]:
        return [
            {"node": v, "height": self.height[v], "slot": self.slot[v],
             "channel": self.channel[v], "cluster": self.cluster}
            for v in sorted(self.slot, key=lambda u: (self.slot[u], u))
        ]


def _within_two_hops(u: int, v: int, adjacency: Mapping[int, Iterable[int]]) -> bool:
    nu = adjacency[u]
    if v in nu:
        return True
    nv = adjacency[v]
    if not isinstance(nu, (set, frozenset)):
        nu = set(nu)
    return not nu.isdisjoint(nv)


def schedule_tree(tree: CandidateTree, adjacency: Mapping[int, Iterable[int]],
                  available_channels: int = 4) -> Schedule:
    """Assign (slot, channel) to every tree node; slots are not yet inverted."""
    if available_channels < 1:
        raise ValueError("available_channels must be >= 1")
    parent = tree.parent
    kids = tree.children()

    slot: dict[int, int] = {}
    channel: dict[int, int] = {}
    height: dict[int, int] = {tree.root: 0}
    visited_at: dict[int, list[int]] = {}
    level_max: dict[int, int] = {}

    queue = deque([tree.root])
    while queue:
        v = queue.popleft()
        h = height[v]
        default = 1 if h == 0 else level_max[h - 1] + 1
        slot[v] = default
        channel[v] = 0
        peers = [n for n in visited_at.get(h, []) if _within_two_hops(v, n, adjacency)]

        changed = True
        while changed:
            changed = False
            for n in peers:
                if slot[v] != slot[n]:
                    continue
                if parent[n] == parent[v]:
                    slot[v] = slot[n] + 1
                    changed = True
                elif channel[v] == channel[n]:
                    if channel[n] + 1 >= available_channels:
                        slot[v] = slot[n] + 1
                    else:
                        channel[v] = channel[n] + 1
                    changed = True

        visited_at.setdefault(h, []).append(v)
        level_max[h] = max(level_max.get(h, 0), slot[v])
        for w in kids[v]:
            if w not in height:
                height[w] = h + 1
                queue.append(w)

    return Schedule(
        slot=slot,
        channel=channel,
        t_max=max(slot.values()),
        height=height,
        available_channels=available_channels,
        parent=dict(parent),
        cluster=tree.cluster,
    )


def invert_slots(schedule: Schedule) -> Schedule:
    """Map every slot t to t_max - t + 1."""
    t_max = schedule.t_max
    return replace(
        schedule,
        slot={v: t_max - t + 1 for v, t in schedule.slot.items()},
        inverted=not schedule.inverted,
    )


def validate_schedule(schedule: Schedule, tree: CandidateTree,
                      adjacency: Mapping[int, Iterable[int]]) -> list[str]:
    """List every interference, sibling or ordering violation."""
    violations = []
    nodes = tree.nodes
    missing = [v for v in nodes if v not in schedule.slot or v not in schedule.channel]
    if missing:
        return [f"unscheduled nodes {missing}"]
    for v in nodes:
        c = schedule.channel[v]
        if not 0 <= c < schedule.available_channels:
            violations.append(f"node {v} channel {c} outside [0, {schedule.available_channels})")
        if not 1 <= schedule.slot[v] <= schedule.t_max:
            violations.append(f"node {v} slot {schedule.slot[v]} outside [1, {schedule.t_max}]")

    heights = tree.heights()
    for i, u in enumerate(nodes):
        for v in nodes[i + 1:]:
            same_slot = schedule.slot[u] == schedule.slot[v]
            if not same_slot:
                continue
            pu, pv = tree.parent[u], tree.parent[v]
            if pu is not None and pu == pv:
                violations.append(f"siblings {u},{v} share slot {schedule.slot[u]}")
            elif (heights[u] == heights[v] and schedule.channel[u] == schedule.channel[v]
                  and _within_two_hops(u, v, adjacency)):
                violations.append(
                    f"nodes {u},{v} at height {heights[u]} within two hops share "
                    f"slot {schedule.slot[u]} channel {schedule.channel[u]}")

    for v, p in tree.parent.items():
        if p is None:
            continue
        if schedule.inverted and not schedule.slot[v] < schedule.slot[p]:
            violations.append(f"child {v} slot {schedule.slot[v]} not before parent {p} slot {schedule.slot[p]}")
        if not schedule.inverted and not schedule.slot[v] > schedule.slot[p]:
            violations.append(f"child {v} slot {schedule.slot[v]} not after parent {p} slot {schedule.slot[p]}")
    return violations


def channel_band(range_lo: float, range_width: float, channel: int, available_channels: int
                 ) -> tuple[float, float, float]:
    """(low edge, centre, high edge) in Hz of an integer channel within a range."""
    w = range_width / available_channels
    lo = range_lo + channel * w
    return lo, lo + 0.5 * w, lo + w


def write_schedule_csv(schedule: Schedule, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["node", "height", "slot", "channel", "cluster"])
        writer.writeheader()
        writer.writerows(schedule.to_rows())
