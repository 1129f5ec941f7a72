import itertools
import math
import random

import numpy as np
import pytest

from dlmtc.tree import (
    TreeError,
    TreeSummary,
    best_dlmtc,
    build_candidate_tree,
    candidate_trees,
    select_subsink,
    validate_tree,
)


def naive_tree(members, energies, adj, root):
    """Quadratic rescan of every (outside, inside) pair per attachment."""
    members = set(members)
    parent = {root: None}
    while True:
        pairs = [(v, p) for v in members if v not in parent
                 for p in parent if p in adj[v]]
        if not pairs:
            return parent
        v, p = min(pairs, key=lambda vp: (-energies[vp[1]], vp[0], vp[1]))
        parent[v] = p


def rules(i, j):
    """The five-rule comparator written out as a plain decision list."""
    if j.rows > i.rows:
        return True
    if j.rows == i.rows and j.total_energy > i.total_energy:
        return True
    if j.rows == i.rows and j.total_energy == i.total_energy and j.depth < i.depth:
        return True
    same3 = j.rows == i.rows and j.total_energy == i.total_energy and j.depth == i.depth
    if same3 and j.root_energy > i.root_energy and j.root_sink_distance < i.root_sink_distance:
        return True
    if (same3 and j.root_energy == i.root_energy and j.root_sink_distance == i.root_sink_distance
            and j.root_index < i.root_index):
        return True
    return False


def random_cluster(seed, n, side=80.0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, side, size=(n, 2))
    d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    adj = {i: frozenset(int(j) for j in np.flatnonzero((d[i] <= 45.0) & (np.arange(n) != i)))
           for i in range(n)}
    # coarse energies so ties actually happen
    energies = {i: float(rng.integers(1, 5)) for i in range(n)}
    return pts, adj, energies


def test_path_structure():
    adj = {0: {1}, 1: {0, 2}, 2: {1}}
    t = build_candidate_tree([0, 1, 2], {0: 5.0, 1: 9.0, 2: 5.0}, adj, 0)
    assert t.parent == {0: None, 1: 0, 2: 1}
    assert t.summary.depth == 2 and t.summary.rows == 3
    assert t.summary.total_energy == 19.0


def test_star_center_forced_parent():
    adj = {0: {1, 2, 3}, 1: {0}, 2: {0}, 3: {0}}
    e = {0: 1.0, 1: 9.0, 2: 9.0, 3: 9.0}
    t = build_candidate_tree(adj.keys(), e, adj, 0)
    assert all(t.parent[v] == 0 for v in (1, 2, 3))


def test_root_must_be_member():
    with pytest.raises(TreeError):
        build_candidate_tree([0, 1], {0: 1.0, 1: 1.0}, {0: {1}, 1: {0}}, 5)
    with pytest.raises(TreeError):
        select_subsink([], {}, {}, [])


@pytest.mark.parametrize("seed", range(20))
def test_replay_oracle(seed):
    _, adj, e = random_cluster(seed, 12)
    root = seed % 12
    t = build_candidate_tree(range(12), e, adj, root)
    assert validate_tree(t, adj) == []
    assert t.parent == naive_tree(range(12), e, adj, root)
    # replay: at attachment time the parent has maximal energy among in-tree neighbours
    inside = {t.order[0]}
    for v in t.order[1:]:
        cands = [p for p in inside if p in adj[v]]
        assert e[t.parent[v]] == max(e[p] for p in cands)
        inside.add(v)
    # coverage equals the root's connected component
    comp, stack = {root}, [root]
    while stack:
        for w in adj[stack.pop()]:
            if w not in comp:
                comp.add(w)
                stack.append(w)
    assert set(t.parent) == comp


def test_comparator_truth_table():
    # every field over a two-value domain: 2^12 ordered pairs, each rule and its negation
    fields = list(itertools.product((1, 2), (1.0, 2.0), (1, 2), (1.0, 2.0), (1.0, 2.0), (1, 2)))
    hits = [0] * 6
    for a, b in itertools.product(fields, repeat=2):
        i, j = TreeSummary(*a), TreeSummary(*b)
        want = rules(i, j)
        assert best_dlmtc(i, j) is want, (a, b)
        hits[0 if a[0] != b[0] else 1 if a[1] != b[1] else 2 if a[2] != b[2] else 3] += 1
        if want:
            hits[4] += 1
        else:
            hits[5] += 1
    assert min(hits) > 0


def test_comparator_examples():
    base = dict(total_energy=10.0, depth=2, root_energy=5.0, root_sink_distance=10.0, root_index=3)
    assert best_dlmtc(TreeSummary(rows=4, **base), TreeSummary(rows=5, **{**base, "total_energy": 0.0}))
    i = TreeSummary(rows=4, **{**base, "root_index": 7})
    j = TreeSummary(rows=4, **{**base, "root_index": 2})
    assert best_dlmtc(i, j) and not best_dlmtc(j, i)
    assert not best_dlmtc(i, i)
    # higher energy but farther from the sink: rule 4 fails and the index rule needs equal e and d
    j4 = TreeSummary(rows=4, **{**base, "root_energy": 6.0, "root_sink_distance": 12.0, "root_index": 1})
    assert not best_dlmtc(TreeSummary(rows=4, **base), j4)


def test_disconnected_analogue_picks_richest_component():
    # members a=0, b=1 (one component) and g=2, h=3 (another); equal rows,
    # the {a, b} trees hold strictly more energy; a is also closer and richer than b
    pos = {0: (0.0, 0.0), 1: (30.0, 0.0), 2: (200.0, 0.0), 3: (230.0, 0.0)}
    adj = {0: {1}, 1: {0}, 2: {3}, 3: {2}}
    e = {0: 9.0, 1: 8.0, 2: 3.0, 3: 2.0}
    sinks = [(-10.0, 0.0)]
    t = select_subsink([0, 1, 2, 3], e, adj, sinks, pos)
    assert t.root == 0
    cands = {c.root: c.summary for c in candidate_trees([0, 1, 2, 3], e, adj, positions=pos,
                                                         sink_positions=sinks)}
    assert all(c.rows == 2 for c in cands.values())
    assert cands[0].total_energy > cands[2].total_energy


def test_single_node_cluster():
    t = select_subsink([4], {4: 1.0}, {4: set()}, [(0.0, 0.0)], {4: (3.0, 4.0)})
    assert t.root == 4 and t.summary.depth == 0
    assert t.summary.root_sink_distance == 5.0


@pytest.mark.parametrize("seed", range(40))
def test_select_equals_brute_force_fold(seed):
    rnd = random.Random(seed)
    n = rnd.randint(1, 10)
    pts, adj, e = random_cluster(seed, n, side=rnd.choice([40.0, 90.0]))
    sinks = [(0.0, 0.0), (80.0, 80.0)]
    positions = {i: tuple(pts[i]) for i in range(n)}
    best = None
    for r in range(n):
        par = naive_tree(range(n), e, adj, r)
        depth = {}
        for v in par:
            d, u = 0, v
            while par[u] is not None:
                u, d = par[u], d + 1
            depth[v] = d
        s = TreeSummary(rows=len(par), total_energy=math.fsum(e[v] for v in sorted(par)),
                        depth=max(depth.values()), root_energy=e[r],
                        root_sink_distance=min(math.dist(positions[r], q) for q in sinks),
                        root_index=r)
        if best is None or rules(best, s):
            best = s
    got = select_subsink(range(n), e, adj, sinks, positions)
    assert got.root == best.root_index
    assert got.summary == best


@pytest.mark.parametrize("seed", range(40))
def test_winner_not_beaten(seed):
    pts, adj, e = random_cluster(100 + seed, 9)
    positions = {i: tuple(pts[i]) for i in range(9)}
    sinks = [(0.0, 0.0)]
    win = select_subsink(range(9), e, adj, sinks, positions)
    for c in candidate_trees(range(9), e, adj, positions=positions, sink_positions=sinks):
        assert not best_dlmtc(win.summary, c.summary)


def test_connected_cluster_spanned_and_dot():
    _, adj, e = random_cluster(3, 10, side=40.0)
    t = select_subsink(range(10), e, adj, [(0.0, 0.0)], {i: (0.0, float(i)) for i in range(10)})
    assert t.summary.rows == 10
    dot = t.to_dot({i: (0.0, float(i)) for i in range(10)})
    assert dot.startswith("digraph") and dot.count("->") == 9


def test_validate_tree_flags_non_edge():
    adj = {0: {1}, 1: {0}, 2: set()}
    t = build_candidate_tree([0, 1], {0: 1.0, 1: 1.0}, adj, 0)
    bad = type(t)(t.cluster, t.root, {0: None, 1: 0, 2: 1}, t.summary, (0, 1, 2))
    assert any("not in disk graph" in p for p in validate_tree(bad, adj))
