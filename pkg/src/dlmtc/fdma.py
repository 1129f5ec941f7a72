"""Frequency-range management at the sink.

The band is split evenly across clusters. A cluster whose sub-sink has seen
its last packet hands its ranges back to a free pool; a cluster asking for
spectrum is served from the pool when possible, otherwise the least busy
cluster gives up the upper half of its widest range.

Range endpoints are kept as ``Fraction`` so the partition stays exact no
matter how many times ranges are split and merged.
"""

from __future__ import annotations

import csv
from collections.abc import Iterable
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

FREE = -1  # cluster column value for free-pool rows in CSV dumps


class FdmaError(ValueError):
    pass


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


@dataclass(frozen=True, order=True)
class FreqRange:
    lo: Fraction
    hi: Fraction

    def __post_init__(self) -> None:
        object.__setattr__(self, "lo", _frac(self.lo))
        object.__setattr__(self, "hi", _frac(self.hi))
        if self.hi <= self.lo:
            raise FdmaError(f"empty or inverted range [{self.lo}, {self.hi})")

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    def __repr__(self) -> str:
        return f"[{float(self.lo):g}, {float(self.hi):g})"


@dataclass(frozen=True)
class ClusterRateStats:
    cluster: int
    packets_sent: int
    window: float = 10.0

    def __post_init__(self) -> None:
        if self.packets_sent < 0:
            raise FdmaError("packets_sent must be non-negative")


@dataclass(frozen=True)
class FrequencyPlan:
    band: FreqRange
    allocations: dict[int, tuple[FreqRange, ...]]
    free_pool: tuple[FreqRange, ...]
    k: int

    __hash__ = None  # type: ignore[assignment]

    @property
    def width(self) -> Fraction:
        return self.band.width

    def ranges_of(self, cluster: int) -> tuple[FreqRange, ...]:
        return self.allocations.get(cluster, ())

    def width_of(self, cluster: int) -> Fraction:
        return sum((r.width for r in self.ranges_of(cluster)), Fraction(0))

    def allocated_width(self) -> Fraction:
        return sum((self.width_of(c) for c in self.allocations), Fraction(0))

    def partition_errors(self) -> list[str]:
        """Empty iff allocated and free ranges tile the band exactly."""
        errors = []
        pieces = [r for rs in self.allocations.values() for r in rs] + list(self.free_pool)
        for c, rs in self.allocations.items():
            if not rs:
                errors.append(f"cluster {c} listed with no ranges")
        pieces.sort()
        cursor = self.band.lo
        for r in pieces:
            if r.lo != cursor:
                errors.append(f"gap or overlap at {float(cursor)} Hz (next range {r!r})")
            cursor = max(cursor, r.hi)
        if cursor != self.band.hi:
            errors.append(f"partition ends at {float(cursor)} Hz, band ends at {float(self.band.hi)}")
        return errors

    def to_rows(self, timestamp: float = 0.0) -> list[dict]:
        rows = []
        for c in sorted(self.allocations):
            for r in self.allocations[c]:
                rows.append({"cluster": c, "range_lo_hz": float(r.lo),
                             "range_hi_hz": float(r.hi), "timestamp": timestamp})
        for r in self.free_pool:
            rows.append({"cluster": FREE, "range_lo_hz": float(r.lo),
                         "range_hi_hz": float(r.hi), "timestamp": timestamp})
        return rows


def _coalesce(ranges: Iterable[FreqRange]) -> tuple[FreqRange, ...]:
    out: list[FreqRange] = []
    for r in sorted(ranges):
        if out and out[-1].hi == r.lo:
            out[-1] = FreqRange(out[-1].lo, r.hi)
        else:
            out.append(r)
    return tuple(out)


def initial_allocate(band, k: int) -> FrequencyPlan:
    """Split the band into ``k`` equal contiguous ranges, range i to cluster i."""
    if k < 1:
        raise FdmaError("need at least one cluster")
    band = band if isinstance(band, FreqRange) else FreqRange(*band)
    step = band.width / k
    allocations = {}
    for i in range(k):
        hi = band.hi if i == k - 1 else band.lo + step * (i + 1)
        allocations[i] = (FreqRange(band.lo + step * i, hi),)
    return FrequencyPlan(band, allocations, (), k)


def withdraw_on_completion(plan: FrequencyPlan, cluster: int) -> FrequencyPlan:
    """Return all of ``cluster``'s ranges to the free pool (no-op if it holds none)."""
    if not plan.ranges_of(cluster):
        return plan
    allocations = {c: rs for c, rs in plan.allocations.items() if c != cluster}
    pool = _coalesce(plan.free_pool + plan.allocations[cluster])
    return FrequencyPlan(plan.band, allocations, pool, plan.k)


def request_allocation(plan: FrequencyPlan, cluster: int,
                       rate_stats: Iterable[ClusterRateStats] = ()) -> FrequencyPlan:
    """Serve a range to ``cluster`` from the pool, or by halving a slow cluster."""
    if plan.ranges_of(cluster):
        raise FdmaError(f"cluster {cluster} already holds spectrum")
    allocations = dict(plan.allocations)
    if plan.free_pool:
        pick = max(plan.free_pool, key=lambda r: (r.width, -r.lo))
        pool = tuple(r for r in plan.free_pool if r != pick)
        allocations[cluster] = (pick,)
        return FrequencyPlan(plan.band, allocations, pool, plan.k)

    sent = {s.cluster: s.packets_sent for s in rate_stats}
    holders = [c for c in allocations if c != cluster and allocations[c]]
    if not holders:
        raise FdmaError("band exhausted and no other cluster to borrow from")
    victim = min(holders, key=lambda c: (sent.get(c, 0), c))
    ranges = allocations[victim]
    widest = max(ranges, key=lambda r: (r.width, -r.lo))
    mid = (widest.lo + widest.hi) / 2
    kept = tuple(sorted([r for r in ranges if r != widest] + [FreqRange(widest.lo, mid)]))
    allocations[victim] = kept
    allocations[cluster] = (FreqRange(mid, widest.hi),)
    return FrequencyPlan(plan.band, allocations, (), plan.k)


def write_plan_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["cluster", "range_lo_hz", "range_hi_hz", "timestamp"])
        writer.writeheader()
        writer.writerows(rows)
