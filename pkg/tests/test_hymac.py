import random

import pytest

from conftest import random_tree
from dlmtc.hymac import (
    Schedule,
    channel_band,
    invert_slots,
    schedule_tree,
    validate_schedule,
    write_schedule_csv,
)
from dlmtc.tree import CandidateTree, TreeSummary, build_candidate_tree


def make_tree(parent):
    kids = {v: sorted(w for w, p in parent.items() if p == v) for v in parent}
    root = next(v for v, p in parent.items() if p is None)
    order, i = [root], 0
    while i < len(order):
        order.extend(kids[order[i]])
        i += 1
    s = TreeSummary(rows=len(parent), total_energy=1.0, depth=1, root_energy=1.0,
                    root_sink_distance=0.0, root_index=root)
    return CandidateTree(0, root, dict(parent), s, tuple(order))


def test_siblings_get_distinct_slots():
    tree = make_tree({0: None, 1: 0, 2: 0})
    adj = {0: {1, 2}, 1: {0}, 2: {0}}
    s = schedule_tree(tree, adj, 4)
    assert s.slot[1] != s.slot[2]
    assert s.channel[1] == s.channel[2] == 0


def test_cousins_share_slot_on_different_channels():
    tree = make_tree({0: None, 1: 0, 2: 0, 3: 1, 4: 2})
    adj = {0: {1, 2}, 1: {0, 3, 4}, 2: {0, 4}, 3: {1}, 4: {2, 1}}
    s = schedule_tree(tree, adj, 4)
    assert s.slot[3] == s.slot[4]
    assert s.channel[3] != s.channel[4]
    assert validate_schedule(s, tree, adj) == []


def test_channel_exhaustion_falls_back_to_slots():
    tree = make_tree({0: None, 1: 0, 2: 0, 3: 1, 4: 2})
    adj = {0: {1, 2}, 1: {0, 3, 4}, 2: {0, 4}, 3: {1}, 4: {2, 1}}
    s = schedule_tree(tree, adj, 1)
    assert s.slot[3] != s.slot[4]
    assert set(s.channel.values()) == {0}


def brute_conflicts(s, tree, adj):
    nodes = sorted(tree.parent)
    h = tree.heights()
    out = []
    for u in nodes:
        for v in nodes:
            if u >= v:
                continue
            two_hop = v in adj[u] or bool(set(adj[u]) & set(adj[v]))
            if tree.parent[u] is not None and tree.parent[u] == tree.parent[v] and s.slot[u] == s.slot[v]:
                out.append(("siblings", u, v))
            if h[u] == h[v] and two_hop and (s.slot[u], s.channel[u]) == (s.slot[v], s.channel[v]):
                out.append(("clash", u, v))
    return out


@pytest.mark.parametrize("seed", range(25))
def test_fifteen_node_random_tree_conflict_free(seed):
    tree, adj = random_tree(random.Random(seed), 15, extra_edges=10)
    s = schedule_tree(tree, adj, 2)
    assert brute_conflicts(s, tree, adj) == []
    assert all(0 <= c < 2 for c in s.channel.values())
    assert s.t_max >= tree.summary.depth + 1
    inv = invert_slots(s)
    assert all(inv.slot[v] < inv.slot[p] for v, p in tree.parent.items() if p is not None)


def test_inversion_examples():
    s = Schedule(slot={1: 2, 2: 1, 3: 5, 4: 3}, channel={1: 0, 2: 0, 3: 0, 4: 0}, t_max=5,
                 height={1: 0, 2: 0, 3: 0, 4: 0}, available_channels=1, parent={})
    inv = invert_slots(s)
    assert inv.slot == {1: 4, 2: 5, 3: 1, 4: 3}
    assert inv.t_max == 5 and inv.channel == s.channel
    assert invert_slots(inv) == s


def test_validate_reports_shared_sibling_slot():
    tree = make_tree({0: None, 1: 0, 2: 0})
    adj = {0: {1, 2}, 1: {0}, 2: {0}}
    s = Schedule(slot={0: 1, 1: 3, 2: 3}, channel={0: 0, 1: 0, 2: 1}, t_max=3,
                 height={0: 0, 1: 1, 2: 1}, available_channels=4, parent=tree.parent)
    v = validate_schedule(s, tree, adj)
    assert len(v) == 1 and "siblings" in v[0]


def test_single_node_tree():
    tree = make_tree({7: None})
    s = invert_slots(schedule_tree(tree, {7: set()}, 4))
    assert s.slot == {7: 1} and s.t_max == 1
    assert validate_schedule(s, tree, {7: set()}) == []


def test_deterministic_on_geometric_tree():
    adj = {0: {1, 2, 3}, 1: {0, 2, 4}, 2: {0, 1, 5}, 3: {0}, 4: {1, 5}, 5: {2, 4}}
    e = {v: float(v) for v in adj}
    t = build_candidate_tree(adj, e, adj, 0)
    assert schedule_tree(t, adj, 3) == schedule_tree(t, adj, 3)


def test_channel_band_and_csv(tmp_path):
    lo, mid, hi = channel_band(1.0e6, 0.5e6, 1, 4)
    assert (lo, mid, hi) == (1.125e6, 1.1875e6, 1.25e6)
    tree = make_tree({0: None, 1: 0})
    s = schedule_tree(tree, {0: {1}, 1: {0}}, 2)
    write_schedule_csv(s, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "node,height,slot,channel,cluster"
    with pytest.raises(ValueError):
        schedule_tree(tree, {0: {1}, 1: {0}}, 0)
