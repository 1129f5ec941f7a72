"""Discrete-event execution of a scheduled sensor network.

The engine runs either the clustered pipeline (``dlmtc``) or the unclustered
baseline (``dlmt``, one lifetime-maximizing tree over the event sources) on a
scenario and accounts every joule:

* nodes idle in low-power listening at ``idle_power``;
* a transmission costs ``tx_power`` for one packet airtime, the addressed
  receiver and every listener tuned to the same frequency range within radio
  range pay ``rx_power`` for the same airtime (at most once per slot);
* aggregation is free: a node forwards everything it holds in one packet.

Cycles follow the inverted HyMAC schedule, so a report reaches the sub-sink
in the cycle it enters, then hops to the nearest reachable sink in the slots
after the cluster's last tree slot.
"""

from __future__ import annotations

import csv
import heapq
import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from dlmtc.clustering import EmConfig, default_k, run_emd
from dlmtc.fdma import (
    ClusterRateStats,
    FrequencyPlan,
    initial_allocate,
    request_allocation,
    withdraw_on_completion,
)
from dlmtc.hymac import Schedule, invert_slots, schedule_tree
from dlmtc.model import NodeRole, Scenario, adjacency_matrix
from dlmtc.tree import CandidateTree, select_subsink

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    DLMT = "dlmt"
    DLMTC = "dlmtc"


class EventKind(IntEnum):
    # value doubles as the tie-break priority at equal timestamps
    NODE_DEATH = 0
    RECONSTRUCT = 1
    REPORT_READY = 2
    SLOT_BEGIN = 3
    SLOT_END = 4
    ENERGY_LOG_TICK = 5


@dataclass(frozen=True)
class PipelineConfig:
    mode: Mode = Mode.DLMTC
    k: int | None = None
    em: EmConfig = field(default_factory=EmConfig)
    channels: int = 4
    band: tuple[float, float] = (0.0, 2.0e6)
    horizon: float = 600.0
    setup_s: float = 2.0
    reconstruct_s: float = 0.05
    queue_limit: int = 16
    rate_window: float = 10.0
    overhearing: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.horizon <= 0 or self.setup_s < 0 or self.reconstruct_s < 0:
            raise ValueError("timing parameters out of range")
        if self.band[1] <= self.band[0]:
            raise ValueError("band must have positive width")
        if self.queue_limit < 1:
            raise ValueError("queue_limit must be >= 1")


class Event(NamedTuple):
    # plain tuple ordering: (time, kind priority, subject, insertion seq)
    time: float
    kind: EventKind
    subject: int
    seq: int
    payload: tuple = ()


class EnergyLedger:
    """Per-node residual energy with idle / rx / tx dissipation breakdown.

    An alive node drains ``idle_w`` whenever it is not busy, so its residual
    at time t is ``base - idle_w * t``; a busy period of length d at power p
    shifts ``base`` by ``idle_w * d - p * d``. Idle dissipation is tracked
    separately through the accumulated busy time, so the conservation check
    compares independent accumulators. Deaths are detected whenever a node is
    touched (and on every log tick) and are timed exactly.
    """

    def __init__(self, initial: np.ndarray, idle_w: float, tracked: np.ndarray):
        self.initial = np.asarray(initial, dtype=float).copy()
        self.idle_w = idle_w
        self.tracked = np.asarray(tracked, dtype=int)
        n = len(self.initial)
        self.base = self.initial.copy()
        self.busy = np.zeros(n)
        self.rx = np.zeros(n)
        self.tx = np.zeros(n)
        self.alive = np.ones(n, dtype=bool)
        self.death_time = np.full(n, np.nan)
        self.now = 0.0
        self.log_times: list[float] = []
        self.log_residual: list[np.ndarray] = []
        self.max_conservation_error = 0.0

    def residual_at(self, idx, t: float) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        return np.where(self.alive[idx], np.maximum(self.base[idx] - self.idle_w * t, 0.0), 0.0)

    def idle_at(self, idx, t: float) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        end = np.where(self.alive[idx], t, np.fmin(self.death_time[idx], t))
        return self.idle_w * (end - self.busy[idx])

    def advance(self, idx, t: float) -> list[int]:
        """Detect nodes among ``idx`` whose idle drain ran out by ``t``."""
        idx = np.asarray(idx, dtype=int)
        base = self.base[idx]
        gone = (base <= self.idle_w * t) & self.alive[idx]
        if not gone.any():
            return []
        d = idx[gone]
        self.death_time[d] = base[gone] / self.idle_w
        self.alive[d] = False
        return sorted(set(d.tolist()))

    def advance_all(self, t: float) -> list[int]:
        self.now = max(self.now, t)
        return self.advance(self.tracked, t)

    def charge(self, idx, power_w: float, duration: float, kind: str, t: float) -> np.ndarray:
        """Bill a busy period starting at ``t`` to alive nodes already advanced to ``t``.

        Returns a boolean mask, True where the node survived the full period.
        Nodes that run dry part-way die at the exact moment they hit zero.
        """
        idx = np.asarray(idx, dtype=int)
        cost = power_w * duration
        bucket = self.tx if kind == "tx" else self.rx
        res = self.base[idx] - self.idle_w * t
        ok = res >= cost
        if ok.all():
            self.base[idx] += self.idle_w * duration - cost
            self.busy[idx] += duration
            bucket[idx] += cost
            return ok
        good = idx[ok]
        self.base[good] += self.idle_w * duration - cost
        self.busy[good] += duration
        bucket[good] += cost
        bad, r = idx[~ok], res[~ok]
        spent = r / power_w
        bucket[bad] += r
        self.busy[bad] += spent
        self.death_time[bad] = t + spent
        self.base[bad] = self.idle_w * self.death_time[bad]
        self.alive[bad] = False
        return ok

    def charge_one(self, u: int, power_w: float, duration: float, kind: str, t: float) -> bool:
        """Scalar version of :meth:`charge` for the common single-sender slot."""
        cost = power_w * duration
        bucket = self.tx if kind == "tx" else self.rx
        res = float(self.base[u]) - self.idle_w * t
        if res >= cost:
            self.base[u] += self.idle_w * duration - cost
            self.busy[u] += duration
            bucket[u] += cost
            return True
        spent = res / power_w
        bucket[u] += res
        self.busy[u] += spent
        self.death_time[u] = t + spent
        self.base[u] = self.idle_w * (t + spent)
        self.alive[u] = False
        return False

    @property
    def residual(self) -> np.ndarray:
        return self.residual_at(np.arange(len(self.initial)), self.now)

    @property
    def idle(self) -> np.ndarray:
        return self.idle_at(np.arange(len(self.initial)), self.now)

    def dissipated(self) -> np.ndarray:
        return self.idle + self.rx + self.tx

    def conservation_error(self) -> float:
        t = self.tracked
        residual = self.residual_at(t, self.now)
        spent = self.idle_at(t, self.now) + self.rx[t] + self.tx[t]
        err = np.abs(self.initial[t] - residual - spent)
        return float(err.max()) if err.size else 0.0

    def sample(self, t: float) -> float:
        self.now = max(self.now, t)
        self.log_times.append(t)
        self.log_residual.append(self.residual_at(self.tracked, t))
        err = self.conservation_error()
        self.max_conservation_error = max(self.max_conservation_error, err)
        return err


class Report:
    __slots__ = ("pid", "source", "generated_at", "hops")

    def __init__(self, pid: int, source: int, generated_at: float):
        self.pid = pid
        self.source = source
        self.generated_at = generated_at
        self.hops: list[tuple[int, int, float]] = []


class Delivery(NamedTuple):
    packet_id: int
    source: int
    generated_at: float
    delivered_at: float
    sink: int
    hops: tuple[tuple[int, int, float], ...]  # (sender, slot, tx start)


class Transmission(NamedTuple):
    time: float
    node: int
    cluster: int
    width_hz: float
    slot: int


@dataclass
class Trace:
    events: list[tuple[float, str, int]] = field(default_factory=list)
    deliveries: list[Delivery] = field(default_factory=list)
    transmissions: list[Transmission] = field(default_factory=list)
    generated: int = 0
    dropped: int = 0
    overflow: int = 0
    unschedulable: int = 0
    reconstructions: int = 0
    airtime: float = 0.0
    band_width: float = 0.0
    run_end: float = 0.0
    plan_rows: list[dict] = field(default_factory=list)
    schedules: dict[int, Schedule] = field(default_factory=dict)
    trees: dict[int, CandidateTree] = field(default_factory=dict)
    subsinks: dict[int, int] = field(default_factory=dict)
    membership: dict[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class MetricsReport:
    mode: str
    num_nodes: int
    seed: int | None
    horizon: float
    ade: float
    anlt: float
    anlt_censored: bool
    mean_source_lifetime: float
    last_source_death: float | None
    avg_delay: float | None
    delay_first_half: float | None
    delay_second_half: float | None
    bandwidth_utilization: float
    delivered_packets: int
    generated_packets: int
    dropped_packets: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.bandwidth_utilization <= 1.0:
            raise ValueError(f"bandwidth utilization {self.bandwidth_utilization} outside [0, 1]")
        if self.delivered_packets > self.generated_packets:
            raise ValueError("delivered more packets than were generated")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


class SimulationResult(NamedTuple):
    metrics: MetricsReport
    ledger: EnergyLedger
    trace: Trace


@dataclass
class _Cluster:
    index: int
    members: list[int]
    listeners: np.ndarray
    sources: list[int]
    version: int = 0
    active: bool = False
    done: bool = False
    rebuild_pending: bool = False
    slot_of: dict[int, int] = field(default_factory=dict)
    next_hop: dict[int, int] = field(default_factory=dict)
    slot_nodes: dict[int, list[int]] = field(default_factory=dict)
    slot_order: list[int] = field(default_factory=list)
    path_nodes: list[int] = field(default_factory=list)
    scheduled_sources: set[int] = field(default_factory=set)
    cycle_len: float = 0.0
    epoch: float = 0.0
    next_cycle: float | None = None
    sends: deque = field(default_factory=deque)
    buf: dict[int, list] = field(default_factory=dict)  # node -> reports held this cycle


class Simulation:
    def __init__(self, scenario: Scenario, config: PipelineConfig):
        self.scenario = scenario
        self.config = config
        p = scenario.params
        self.p = p
        self.tau = p.airtime
        self.tx_w = p.tx_power / 1000.0
        self.rx_w = p.rx_power / 1000.0
        self.idle_w = p.idle_power / 1000.0
        self.horizon = config.horizon

        nodes = scenario.nodes
        self.n_total = len(nodes)
        self.positions = scenario.positions
        self.is_sink = np.array([n.role is NodeRole.SINK for n in nodes])
        self.sensors = np.flatnonzero(~self.is_sink)
        self.sinks = np.flatnonzero(self.is_sink)
        self.sources = sorted(scenario.sources)
        self.adj = adjacency_matrix(self.positions, p.radio_range)
        self.adj_sets = {i: frozenset(np.flatnonzero(self.adj[i]).tolist()) for i in range(self.n_total)}
        self.neighbors = {i: sorted(self.adj_sets[i]) for i in range(self.n_total)}
        self.sink_positions = self.positions[self.sinks]

        initial = np.array([n.residual_energy for n in nodes], dtype=float)
        self.ledger = EnergyLedger(initial, self.idle_w, self.sensors)
        for s in self.sinks:
            self.ledger.alive[s] = True

        self.trace = Trace(airtime=self.tau, band_width=config.band[1] - config.band[0])
        self.heap: list[Event] = []
        self._seq = 0
        self._pid = 0
        self.pending: dict[int, deque] = {s: deque() for s in self.sources}
        self.cluster_of: dict[int, int] = {}
        self.path_users: dict[int, set[int]] = {}
        self.clusters: list[_Cluster] = []
        self.plan: FrequencyPlan | None = None
        self._hear_cache: dict[tuple[int, int, int], np.ndarray] = {}
        self.finished = False

    # -- event plumbing -------------------------------------------------
    def push(self, time: float, kind: EventKind, subject: int, payload: tuple = ()) -> None:
        self._seq += 1
        heapq.heappush(self.heap, Event(time, kind, subject, self._seq, payload))

    # -- setup ----------------------------------------------------------
    def _build_clusters(self) -> None:
        cfg = self.config
        sensors = self.sensors.tolist()
        k = cfg.k if cfg.k is not None else default_k(len(sensors))
        k = max(1, min(k, len(sensors)))
        self.k = k
        self.plan = initial_allocate(cfg.band, k)
        self._width = {c: float(self.plan.width_of(c)) / cfg.channels for c in range(k)}
        if cfg.mode is Mode.DLMTC:
            _, assignment = run_emd(self.positions[sensors], k, cfg.em, ids=sensors)
            self.trace.membership = dict(assignment.membership)
            for c in range(k):
                members = assignment.members(c)
                mask = np.zeros(self.n_total, dtype=bool)
                mask[members] = True
                srcs = [s for s in self.sources if assignment.membership[s] == c]
                self.clusters.append(_Cluster(c, members, mask, srcs))
                for v in members:
                    self.cluster_of[v] = c
        else:
            # one tree over the event sources; everyone shares its channel
            mask = np.zeros(self.n_total, dtype=bool)
            mask[self.sensors] = True
            self.clusters.append(_Cluster(0, list(self.sources), mask, list(self.sources)))
            for s in self.sources:
                self.cluster_of[s] = 0
            self.trace.membership = {s: 0 for s in self.sources}

    def run(self) -> SimulationResult:
        p, cfg = self.p, self.config
        self._build_clusters()
        self.trace.plan_rows.extend(self.plan.to_rows(0.0))
        for cl in self.clusters:
            if not cl.sources:
                # nothing will ever be sensed here: hand the range back right away
                self._retire(cl, 0.0, ())
                continue
            cl.rebuild_pending = True
            self.push(cfg.setup_s, EventKind.RECONSTRUCT, cl.index)
        for s in self.sources:
            t0 = self.scenario.report_start.get(s, 0.0)
            if t0 <= self.horizon:
                self.push(t0, EventKind.REPORT_READY, s)
        n_ticks = int(math.floor(self.horizon / p.energy_log_interval + 1e-9))
        for i in range(n_ticks + 1):
            self.push(i * p.energy_log_interval, EventKind.ENERGY_LOG_TICK, 0)

        while self.heap and not self.finished:
            ev = heapq.heappop(self.heap)
            if ev.time > self.horizon:
                break
            self.trace.events.append((ev.time, ev.kind.name.lower(), ev.subject))
            if ev.kind is EventKind.REPORT_READY:
                self._on_report(ev)
            elif ev.kind is EventKind.SLOT_BEGIN:
                self._on_slot(ev)
            elif ev.kind is EventKind.RECONSTRUCT:
                self._on_reconstruct(ev)
            elif ev.kind is EventKind.ENERGY_LOG_TICK:
                self._on_tick(ev)

        end = self.trace.run_end if self.finished else self.horizon
        self.trace.run_end = end
        self._handle_deaths(self.ledger.advance_all(end), end)
        metrics = compute_metrics(self.ledger, self.trace, self.scenario, mode=cfg.mode.value)
        return SimulationResult(metrics, self.ledger, self.trace)

    # -- handlers -------------------------------------------------------
    def _handle_deaths(self, dead: list[int], t: float) -> None:
        for v in dead:
            td = float(self.ledger.death_time[v])
            self.trace.events.append((td, EventKind.NODE_DEATH.name.lower(), v))
            for cl in self.clusters:
                held = cl.buf.pop(v, None)
                if held:
                    self.trace.dropped += len(held)
            if v in self.pending:
                self.trace.dropped += len(self.pending[v])
                self.pending[v].clear()
            affected = set(self.path_users.get(v, ()))
            if v in self.cluster_of:
                affected.add(self.cluster_of[v])
            for c in sorted(affected):
                cl = self.clusters[c]
                if cl.done:
                    continue
                cl.version += 1
                cl.active = False
                cl.next_cycle = None
                self._release(cl)  # any in-flight cycle is abandoned
                if not cl.rebuild_pending:
                    cl.rebuild_pending = True
                    self.push(t + self.config.reconstruct_s, EventKind.RECONSTRUCT, c)

    def _on_tick(self, ev: Event) -> None:
        self._handle_deaths(self.ledger.advance_all(ev.time), ev.time)
        self.ledger.sample(ev.time)
        if not self.ledger.alive[self.sensors].any():
            self.finished = True
            self.trace.run_end = ev.time

    def _on_report(self, ev: Event) -> None:
        s, t = ev.subject, ev.time
        dead = self.ledger.advance([s], t)
        if dead:
            self._handle_deaths(dead, t)
            return
        if not self.ledger.alive[s]:
            return
        nxt = t + 1.0 / self.p.report_rate
        if nxt <= self.horizon:
            self.push(nxt, EventKind.REPORT_READY, s)
        self.trace.generated += 1
        self._pid += 1
        report = Report(self._pid, s, t)
        cl = self.clusters[self.cluster_of[s]] if s in self.cluster_of else None
        if cl is None or cl.done or (cl.active and s not in cl.scheduled_sources):
            self.trace.unschedulable += 1
            return
        q = self.pending[s]
        q.append(report)
        if len(q) > self.config.queue_limit:
            q.popleft()
            self.trace.overflow += 1
            self.trace.dropped += 1
        if cl.active:
            self._ensure_cycle(cl, t)

    def _ensure_cycle(self, cl: _Cluster, t: float) -> None:
        if cl.next_cycle is not None and cl.next_cycle >= t:
            return
        m = math.ceil((t - cl.epoch) / cl.cycle_len)
        if m > 0 and cl.epoch + (m - 1) * cl.cycle_len >= t:
            m -= 1
        start = cl.epoch + max(m, 0) * cl.cycle_len
        cl.next_cycle = start
        self.push(start, EventKind.SLOT_BEGIN, cl.index, (cl.version, start, cl.slot_order[0]))

    def _on_slot(self, ev: Event) -> None:
        c = ev.subject
        cl = self.clusters[c]
        version, start, slot = ev.payload
        if version != cl.version or not cl.active:
            return
        if slot == cl.slot_order[0] and cl.next_cycle == start:
            cl.next_cycle = None
            self._acquire(cl, start)
            for s in sorted(cl.scheduled_sources):
                q = self.pending[s]
                moved = []
                while q and q[0].generated_at <= start:
                    moved.append(q.popleft())
                if moved:
                    cl.buf.setdefault(s, []).extend(moved)

        ts = start + (slot - 1) * self.tau
        buf = cl.buf
        senders = [u for u in cl.slot_nodes[slot] if u in buf]
        if senders:
            self._transmit(cl, senders, slot, ts)
            if cl.version != version:
                return

        slot_of = cl.slot_of
        later = [slot_of[u] for u in buf if slot_of[u] > slot]
        if later:
            s2 = min(later)
            self.push(start + (s2 - 1) * self.tau, EventKind.SLOT_BEGIN, c, (version, start, s2))
        else:
            # the sub-sink has seen the cycle's last packet
            self._release(cl)
            if any(self.pending[s] for s in cl.scheduled_sources):
                self._ensure_cycle(cl, ts + self.tau)

    def _set_plan(self, plan: FrequencyPlan) -> None:
        old = self.plan
        self.plan = plan
        for c in set(old.allocations) | set(plan.allocations):
            if old.allocations.get(c) != plan.allocations.get(c):
                self._width[c] = float(plan.width_of(c)) / self.config.channels

    def _acquire(self, cl: _Cluster, t: float) -> None:
        if self.config.mode is Mode.DLMTC and not self.plan.ranges_of(cl.index):
            # rates only matter when the pool is empty and a victim must be chosen
            stats = () if self.plan.free_pool else self._rate_stats(t)
            self._set_plan(request_allocation(self.plan, cl.index, stats))

    def _release(self, cl: _Cluster) -> None:
        if self.config.mode is Mode.DLMTC and self.plan.ranges_of(cl.index):
            self._set_plan(withdraw_on_completion(self.plan, cl.index))

    def _hearers(self, cl: _Cluster, u: int) -> np.ndarray:
        """Nodes billed for receiving u's packet: its next hop plus overhearers."""
        r = cl.next_hop[u]
        key = (cl.index, u, r)
        arr = self._hear_cache.get(key)
        if arr is None:
            if self.config.overhearing:
                mask = self.adj[u] & cl.listeners
            else:
                mask = np.zeros(self.n_total, dtype=bool)
            mask[r] = True
            mask &= ~self.is_sink
            mask[u] = False
            arr = np.flatnonzero(mask)
            self._hear_cache[key] = arr
        return arr

    def _transmit(self, cl: _Cluster, senders: list[int], slot: int, ts: float) -> None:
        c = cl.index
        ledger = self.ledger
        if len(senders) == 1:
            hear = self._hearers(cl, senders[0])
        else:
            hear = np.setdiff1d(np.concatenate([self._hearers(cl, u) for u in senders]), senders)
        dead = ledger.advance(np.concatenate([senders, hear]), ts)
        if dead:
            self._handle_deaths(dead, ts)

        alive_senders = [u for u in senders if ledger.alive[u]]
        if not alive_senders:
            return
        if len(alive_senders) == 1:
            ok = [ledger.charge_one(alive_senders[0], self.tx_w, self.tau, "tx", ts)]
        else:
            ok = ledger.charge(alive_senders, self.tx_w, self.tau, "tx", ts)
        sent = [u for u, good in zip(alive_senders, ok) if good]
        failed = [u for u, good in zip(alive_senders, ok) if not good]

        hear = hear[ledger.alive[hear]]
        rx_ok = ledger.charge(hear, self.rx_w, self.tau, "rx", ts)
        if not rx_ok.all():
            failed += hear[~rx_ok].tolist()

        deliveries = self.trace.deliveries
        for u in sent:
            self.trace.transmissions.append(Transmission(ts, u, c, self._width[c], slot))
            cl.sends.append(ts)
            reports = cl.buf.pop(u, [])
            hop = (u, slot, ts)
            for rep in reports:
                rep.hops.append(hop)
            r = cl.next_hop[u]
            if self.is_sink[r]:
                arrival = ts + self.tau
                for rep in reports:
                    deliveries.append(Delivery(
                        rep.pid, rep.source, rep.generated_at, arrival, r, tuple(rep.hops)))
            elif ledger.alive[r]:
                cl.buf.setdefault(r, []).extend(reports)
            else:
                self.trace.dropped += len(reports)
        if failed:
            self._handle_deaths(sorted(set(failed)), ts + self.tau)

    def _rate_stats(self, now: float) -> list[ClusterRateStats]:
        stats = []
        for cl in self.clusters:
            while cl.sends and cl.sends[0] < now - self.config.rate_window:
                cl.sends.popleft()
            stats.append(ClusterRateStats(cl.index, len(cl.sends), self.config.rate_window))
        return stats

    def _sink_path(self, root: int, blocked: set[int]) -> list[int] | None:
        """Fewest-hop path from root to the nearest reachable sink."""
        alive = self.ledger.alive
        prev = {root: None}
        queue = deque([root])
        while queue:
            u = queue.popleft()
            if self.is_sink[u]:
                continue
            for w in self.neighbors[u]:
                if w in prev:
                    continue
                if not self.is_sink[w] and (not alive[w] or w in blocked):
                    continue
                prev[w] = u
                queue.append(w)
        reached = [s for s in self.sinks.tolist() if s in prev]
        if not reached:
            return None
        rx, ry = self.positions[root]
        target = min(reached, key=lambda s: (math.hypot(self.positions[s][0] - rx,
                                                        self.positions[s][1] - ry), s))
        path = [target]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        return path[::-1]

    def _on_reconstruct(self, ev: Event) -> None:
        t = ev.time
        c = ev.subject
        cl = self.clusters[c]
        cl.rebuild_pending = False
        if cl.done:
            return
        self._handle_deaths(self.ledger.advance_all(t), t)
        cl.rebuild_pending = False
        self.trace.reconstructions += 1
        alive = self.ledger.alive
        old_nodes = set(cl.slot_of)
        for f in cl.path_nodes:
            self.path_users.get(f, set()).discard(c)
        cl.path_nodes = []

        members = [v for v in cl.members if alive[v]]
        live_sources = [s for s in cl.sources if alive[s]]
        if not live_sources:
            self._retire(cl, t, old_nodes)
            return

        res = self.ledger.residual_at(members, t)
        energies = {v: float(e) for v, e in zip(members, res)}
        tree = select_subsink(members, energies, self.adj_sets, self.sink_positions,
                              self.positions, cluster=c)
        carried = set()
        for s in live_sources:
            if s in tree.parent:
                carried.update(tree.path_to_root(s))
        pruned = CandidateTree(
            cluster=c,
            root=tree.root,
            parent={v: tree.parent[v] for v in carried},
            summary=tree.summary,
            order=tuple(v for v in tree.order if v in carried),
        )
        sched = invert_slots(schedule_tree(pruned, self.adj_sets, self.config.channels))
        path = self._sink_path(tree.root, set(carried) - {tree.root})

        cl.version += 1
        cl.scheduled_sources = {s for s in live_sources if s in carried}
        for s in live_sources:
            if s not in carried:
                self.trace.dropped += len(self.pending[s])
                self.pending[s].clear()
        self.trace.trees[c] = tree
        self.trace.schedules[c] = sched
        self.trace.subsinks[c] = tree.root

        if path is None:
            logger.warning("cluster %d: no sink reachable from sub-sink %d", c, tree.root)
            cl.active = False
            cl.slot_of = {}
            for s in live_sources:
                self.trace.dropped += len(self.pending[s])
                self.pending[s].clear()
            cl.scheduled_sources = set()
            self._drop_buffers(c, old_nodes)
            return

        slot_of = dict(sched.slot)
        next_hop = {v: p for v, p in pruned.parent.items() if p is not None}
        for i, hop in enumerate(path[1:], start=1):
            next_hop[path[i - 1]] = hop
            if i < len(path) - 1:
                slot_of[hop] = sched.t_max + i
                cl.path_nodes.append(hop)
                self.path_users.setdefault(hop, set()).add(c)
        cl.slot_of = slot_of
        cl.next_hop = next_hop
        cl.slot_nodes = {}
        for v, s in slot_of.items():
            cl.slot_nodes.setdefault(s, []).append(v)
        for s in cl.slot_nodes:
            cl.slot_nodes[s].sort()
        cl.slot_order = sorted(cl.slot_nodes)
        cl.cycle_len = max(cl.slot_order) * self.tau
        self._drop_buffers(c, old_nodes - set(slot_of))

        self.trace.plan_rows.extend(self.plan.to_rows(t))

        cl.active = True
        cl.epoch = t
        cl.next_cycle = None
        has_data = any(self.pending[s] for s in cl.scheduled_sources) or any(
            v in cl.buf for v in slot_of)
        if has_data:
            self._ensure_cycle(cl, t)

    def _drop_buffers(self, c: int, nodes) -> None:
        for v in nodes:
            rep = self.clusters[c].buf.pop(v, None)
            if rep:
                self.trace.dropped += len(rep)

    def _retire(self, cl: _Cluster, t: float, old_nodes) -> None:
        """The sub-sink has seen its last packet: release the cluster's spectrum."""
        cl.done = True
        cl.active = False
        cl.version += 1
        self._drop_buffers(cl.index, old_nodes)
        cl.slot_of = {}
        cl.scheduled_sources = set()
        if self.config.mode is Mode.DLMTC:
            self._release(cl)
            self.trace.plan_rows.extend(self.plan.to_rows(t))


def run_simulation(scenario: Scenario, config: PipelineConfig | None = None) -> SimulationResult:
    return Simulation(scenario, config or PipelineConfig()).run()


def _mean_or_none(values: list[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def compute_metrics(ledger: EnergyLedger, trace: Trace, scenario: Scenario,
                    mode: str = "") -> MetricsReport:
    """Summarise a finished run."""
    sensors = scenario.sensors
    end = trace.run_end
    ade = math.fsum(ledger.dissipated()[sensors].tolist()) / len(sensors)

    src = scenario.sources
    deaths = [float(ledger.death_time[s]) for s in src if not math.isnan(ledger.death_time[s])]
    deaths = [d for d in deaths if d <= end]
    if deaths:
        anlt, censored = min(deaths), False
    else:
        anlt, censored = end, True
    lifetimes = []
    for s in src:
        d = ledger.death_time[s]
        lifetimes.append(end if math.isnan(d) or d > end else float(d))
    mean_life = math.fsum(lifetimes) / len(lifetimes) if lifetimes else end
    last = max(deaths) if len(deaths) == len(src) and src else None

    delays = [d.delivered_at - d.generated_at for d in trace.deliveries]
    half = end / 2.0
    first = [d.delivered_at - d.generated_at for d in trace.deliveries if d.generated_at < half]
    second = [d.delivered_at - d.generated_at for d in trace.deliveries if d.generated_at >= half]

    used = math.fsum(tx.width_hz * trace.airtime for tx in trace.transmissions)
    denom = trace.band_width * end
    utilization = used / denom if denom > 0 else 0.0

    return MetricsReport(
        mode=mode,
        num_nodes=len(sensors),
        seed=scenario.seed,
        horizon=end,
        ade=ade,
        anlt=anlt,
        anlt_censored=censored,
        mean_source_lifetime=mean_life,
        last_source_death=last,
        avg_delay=_mean_or_none(delays),
        delay_first_half=_mean_or_none(first),
        delay_second_half=_mean_or_none(second),
        bandwidth_utilization=utilization,
        delivered_packets=len(trace.deliveries),
        generated_packets=trace.generated,
        dropped_packets=trace.dropped,
    )


def write_outputs(result: SimulationResult, out_dir: str | Path) -> None:
    """metrics.json, energy_log.csv and deliveries.csv under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(result.metrics.to_json() + "\n")
    ledger = result.ledger
    with open(out / "energy_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "node", "residual"])
        ids = ledger.tracked.tolist()
        for t, row in zip(ledger.log_times, ledger.log_residual):
            for node, e in zip(ids, row.tolist()):
                w.writerow([repr(t), node, repr(e)])
    with open(out / "deliveries.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["packet_id", "source", "generated_at", "delivered_at", "hops"])
        for d in result.trace.deliveries:
            w.writerow([d.packet_id, d.source, repr(d.generated_at), repr(d.delivered_at),
                        " ".join(str(h[0]) for h in d.hops) + f" {d.sink}"])
