"""Command-line batch runner.

    dlmtc sweep --nodes 50..300:50 --modes dlmt,dlmtc --seeds 10 --out results/
    dlmtc run scenario.json --mode dlmtc --out run/
    dlmtc generate --nodes 100 --seed 3 --out scenario.json

The sweep writes one JSON per run under ``runs/``, a flat ``runs.csv`` and
per-(N, mode) mean/std aggregates: ade_vs_n.csv, anlt_vs_n.csv,
delay_vs_time.csv and bandwidth_vs_n.csv.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from dlmtc.model import Scenario, ScenarioParams, generate_scenario
from dlmtc.sim import Mode, PipelineConfig, run_simulation, write_outputs

logger = logging.getLogger("dlmtc")

OUT_ENV = "DLMTC_OUT"
DELAY_WINDOWS = 10


@dataclass(frozen=True)
class SweepSpec:
    node_counts: tuple[int, ...] = (50, 100, 150, 200, 250, 300)
    modes: tuple[str, ...] = ("dlmt", "dlmtc")
    seeds_per_point: int = 10
    output_dir: Path = Path("dlmtc_out")
    k: int | None = None
    channels: int = 4
    band_hz: float = 2.0e6
    horizon_s: float = 600.0
    seed_base: int = 0
    workers: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.node_counts:
            raise ValueError("node_counts must be non-empty")
        if list(self.node_counts) != sorted(set(self.node_counts)):
            raise ValueError("node_counts must be strictly ascending")
        if self.seeds_per_point < 1:
            raise ValueError("need at least one seed per point")
        for m in self.modes:
            Mode(m)

    def pipeline(self, mode: str) -> PipelineConfig:
        return PipelineConfig(mode=Mode(mode), k=self.k, channels=self.channels,
                              band=(0.0, self.band_hz), horizon=self.horizon_s, **self.extra)

    @property
    def seeds(self) -> list[int]:
        return [self.seed_base + i for i in range(self.seeds_per_point)]


def parse_nodes(text: str) -> tuple[int, ...]:
    """``50..300:50`` -> (50, 100, ..., 300); also accepts ``50,100``."""
    text = text.strip()
    if ".." in text:
        span, _, step = text.partition(":")
        lo, hi = (int(x) for x in span.split(".."))
        step_n = int(step) if step else 1
        if step_n < 1 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad node range {text!r}")
        return tuple(range(lo, hi + 1, step_n))
    return tuple(int(x) for x in text.split(",") if x)


def parse_k(text: str) -> int | None:
    if text == "auto":
        return None
    k = int(text)
    if k < 1:
        raise argparse.ArgumentTypeError("k must be >= 1 or 'auto'")
    return k


def _delay_profile(deliveries, span: float) -> list[float | None]:
    sums = [[] for _ in range(DELAY_WINDOWS)]
    for d in deliveries:
        i = min(int(d.generated_at / span * DELAY_WINDOWS), DELAY_WINDOWS - 1) if span > 0 else 0
        sums[i].append(d.delivered_at - d.generated_at)
    return [math.fsum(v) / len(v) if v else None for v in sums]


def run_cell(n: int, mode: str, seed: int, spec: SweepSpec) -> dict:
    """One (N, mode, seed) run; failures are returned, not raised."""
    row = {"n": n, "mode": mode, "seed": seed, "error": ""}
    try:
        scenario = generate_scenario(ScenarioParams(num_nodes=n), seed)
        result = run_simulation(scenario, spec.pipeline(mode))
        row.update(result.metrics.to_dict())
        row["delay_profile"] = _delay_profile(result.trace.deliveries, result.trace.run_end)
        row["max_conservation_error"] = result.ledger.max_conservation_error
    except Exception as exc:  # recorded per cell, sweep continues
        logger.error("run n=%d mode=%s seed=%d failed: %s", n, mode, seed, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
        row["traceback"] = traceback.format_exc()
    return row


def _cell_star(args):
    return run_cell(*args)


def run_sweep(spec: SweepSpec) -> list[dict]:
    out = Path(spec.output_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    cells = [(n, m, s, spec) for n in spec.node_counts for m in spec.modes for s in spec.seeds]
    t0 = time.perf_counter()
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(_cell_star, cells, chunksize=1))
    else:
        rows = [_cell_star(c) for c in cells]
    rows.sort(key=lambda r: (r["n"], r["mode"], r["seed"]))
    logger.info("%d runs in %.1f s", len(rows), time.perf_counter() - t0)
    for r in rows:
        name = f"n{r['n']}_{r['mode']}_s{r['seed']}.json"
        (out / "runs" / name).write_text(json.dumps(r, sort_keys=True, indent=1) + "\n")
    write_runs_csv(rows, out / "runs.csv")
    write_aggregates(rows, spec, out)
    return rows


RUN_COLUMNS = ["n", "mode", "seed", "ade", "anlt", "anlt_censored", "mean_source_lifetime",
               "last_source_death", "avg_delay", "delay_first_half", "delay_second_half",
               "bandwidth_utilization", "delivered_packets", "generated_packets",
               "dropped_packets", "max_conservation_error", "error"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_runs_csv(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in RUN_COLUMNS])


def mean_std(values) -> tuple[float | None, float | None, int]:
    vals = [float(v) for v in values if v is not None]
    if not vals:
        return None, None, 0
    mean = math.fsum(vals) / len(vals)
    if len(vals) < 2:
        return mean, 0.0, len(vals)
    var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    return mean, math.sqrt(var), len(vals)


def _groups(rows: list[dict], spec: SweepSpec):
    for n in spec.node_counts:
        for m in spec.modes:
            yield n, m, [r for r in rows if r["n"] == n and r["mode"] == m and not r["error"]]


AGGREGATES = {
    "ade_vs_n.csv": ["ade"],
    "anlt_vs_n.csv": ["anlt", "mean_source_lifetime", "last_source_death"],
    "bandwidth_vs_n.csv": ["bandwidth_utilization"],
    "delay_vs_time.csv": ["avg_delay", "delay_first_half", "delay_second_half"]
    + [f"delay_w{i}" for i in range(DELAY_WINDOWS)],
}


def _value(row: dict, key: str):
    if key.startswith("delay_w"):
        return row["delay_profile"][int(key[7:])]
    return row.get(key)


def aggregate(rows: list[dict], spec: SweepSpec) -> dict[str, list[dict]]:
    tables = {}
    for fname, keys in AGGREGATES.items():
        table = []
        for n, m, group in _groups(rows, spec):
            rec = {"n": n, "mode": m, "runs": len(group)}
            for k in keys:
                mean, std, _ = mean_std(_value(r, k) for r in group)
                rec[f"{k}_mean"], rec[f"{k}_std"] = mean, std
            table.append(rec)
        tables[fname] = table
    return tables


def write_aggregates(rows: list[dict], spec: SweepSpec, out: Path) -> None:
    for fname, table in aggregate(rows, spec).items():
        with open(out / fname, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            cols = list(table[0].keys())
            w.writerow(cols)
            for rec in table:
                w.writerow([_fmt(rec[c]) for c in cols])


def check_trends(rows: list[dict], spec: SweepSpec) -> list[tuple[str, bool, str]]:
    """Evaluate the sweep-level trend checks; returns (name, passed, detail)."""
    results = []
    failed = [r for r in rows if r["error"]]
    results.append(("runs_completed", not failed, f"{len(failed)} failed runs"))
    by = {(n, m): g for n, m, g in _groups(rows, spec)}

    if {"dlmt", "dlmtc"} <= set(spec.modes):
        for key, better in (("ade", "lower"), ("anlt", "higher"), ("bandwidth_utilization", "higher")):
            ok, detail = True, []
            for n in spec.node_counts:
                a = mean_std(r[key] for r in by[(n, "dlmtc")])[0]
                b = mean_std(r[key] for r in by[(n, "dlmt")])[0]
                good = a is not None and b is not None and (a < b if better == "lower" else a > b)
                ok &= good
                detail.append(f"N={n}: dlmtc={a:.6g} dlmt={b:.6g}" if a is not None and b is not None
                              else f"N={n}: missing")
            results.append((f"{key}_dlmtc_{better}", ok, "; ".join(detail)))
    if "dlmtc" in spec.modes:
        bad = [(r["n"], r["seed"]) for r in rows if r["mode"] == "dlmtc" and not r["error"]
               and r["delay_first_half"] is not None and r["delay_second_half"] is not None
               and r["delay_second_half"] > r["delay_first_half"]]
        results.append(("delay_second_half_le_first", not bad, f"violations: {bad}"))
    return results


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dlmtc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="run the N x mode x seed experiment grid")
    sw.add_argument("--nodes", type=parse_nodes, default=(50, 100, 150, 200, 250, 300))
    sw.add_argument("--modes", type=lambda s: tuple(m for m in s.split(",") if m), default=("dlmt", "dlmtc"))
    sw.add_argument("--seeds", type=int, default=10)
    sw.add_argument("--seed-base", type=int, default=0)
    sw.add_argument("--k", type=parse_k, default=None)
    sw.add_argument("--channels", type=int, default=4)
    sw.add_argument("--band-hz", type=float, default=2.0e6)
    sw.add_argument("--horizon-s", type=float, default=600.0)
    sw.add_argument("--out", type=Path, default=None)
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--check", action="store_true", help="exit nonzero if a trend check fails")

    rn = sub.add_parser("run", help="simulate one scenario file")
    rn.add_argument("scenario", type=Path)
    rn.add_argument("--mode", choices=[m.value for m in Mode], default="dlmtc")
    rn.add_argument("--k", type=parse_k, default=None)
    rn.add_argument("--channels", type=int, default=4)
    rn.add_argument("--band-hz", type=float, default=2.0e6)
    rn.add_argument("--horizon-s", type=float, default=600.0)
    rn.add_argument("--out", type=Path, default=None)

    gen = sub.add_parser("generate", help="write a random scenario file")
    gen.add_argument("--nodes", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, required=True)
    return ap


def _default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "dlmtc_out"))


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "generate":
        generate_scenario(ScenarioParams(num_nodes=args.nodes), args.seed).save(args.out)
        return 0

    out = args.out or _default_out()
    if args.command == "run":
        scenario = Scenario.load(args.scenario)
        cfg = PipelineConfig(mode=Mode(args.mode), k=args.k, channels=args.channels,
                             band=(0.0, args.band_hz), horizon=args.horizon_s)
        result = run_simulation(scenario, cfg)
        write_outputs(result, out)
        print(result.metrics.to_json())
        return 0

    spec = SweepSpec(node_counts=args.nodes, modes=args.modes, seeds_per_point=args.seeds,
                     output_dir=out, k=args.k, channels=args.channels, band_hz=args.band_hz,
                     horizon_s=args.horizon_s, seed_base=args.seed_base, workers=args.workers)
    rows = run_sweep(spec)
    failed = [r for r in rows if r["error"]]
    print(f"{len(rows)} runs, {len(failed)} failed; results in {out}")
    if args.check:
        checks = check_trends(rows, spec)
        for name, ok, detail in checks:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return 0 if all(ok for _, ok, _ in checks) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
