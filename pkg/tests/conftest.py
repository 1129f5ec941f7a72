import random

import pytest

from dlmtc.tree import CandidateTree, TreeSummary

# filled by the acceptance suite, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def random_tree(rng: random.Random, n: int, extra_edges: int = 0):
    """Random recursive tree on 0..n-1 plus some non-tree adjacency edges.

    Returns (CandidateTree, adjacency) with adjacency a dict of sets.
    """
    parent = {0: None}
    adj = {i: set() for i in range(n)}
    for v in range(1, n):
        p = rng.randrange(v)
        parent[v] = p
        adj[v].add(p)
        adj[p].add(v)
    for _ in range(extra_edges):
        a, b = rng.randrange(n), rng.randrange(n)
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    order, depth = [0], {0: 0}
    kids = {v: [] for v in range(n)}
    for v in range(1, n):
        kids[parent[v]].append(v)
    i = 0
    while i < len(order):
        for w in kids[order[i]]:
            depth[w] = depth[order[i]] + 1
            order.append(w)
        i += 1
    summary = TreeSummary(rows=n, total_energy=float(n), depth=max(depth.values()),
                          root_energy=1.0, root_sink_distance=1.0, root_index=0)
    tree = CandidateTree(cluster=0, root=0, parent=parent, summary=summary, order=tuple(order))
    return tree, {k: frozenset(v) for k, v in adj.items()}


@pytest.fixture
def rng():
    return random.Random(12345)
