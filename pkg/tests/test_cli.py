import csv
import json

import pytest

from dlmtc.cli import SweepSpec, main, mean_std, parse_k, parse_nodes, run_sweep


def small_spec(out, **kw):
    base = dict(node_counts=(50,), modes=("dlmt", "dlmtc"), seeds_per_point=1,
                output_dir=out, horizon_s=60.0)
    base.update(kw)
    return SweepSpec(**base)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_parse_nodes_and_k():
    assert parse_nodes("50..300:50") == (50, 100, 150, 200, 250, 300)
    assert parse_nodes("60,80") == (60, 80)
    assert parse_k("auto") is None and parse_k("3") == 3


def test_default_grid_size():
    spec = SweepSpec()
    assert len(spec.node_counts) * len(spec.modes) * spec.seeds_per_point == 120


def test_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec(node_counts=())
    with pytest.raises(ValueError):
        SweepSpec(node_counts=(100, 50))
    with pytest.raises(ValueError):
        SweepSpec(seeds_per_point=0)


def test_one_point_two_rows(tmp_path):
    rows = run_sweep(small_spec(tmp_path))
    assert len(rows) == 2
    for name in ("ade_vs_n.csv", "anlt_vs_n.csv", "delay_vs_time.csv", "bandwidth_vs_n.csv"):
        assert len(read_csv(tmp_path / name)) == 2
    assert len(read_csv(tmp_path / "runs.csv")) == 2
    assert len(list((tmp_path / "runs").glob("*.json"))) == 2


def test_aggregates_are_means_of_runs(tmp_path):
    spec = small_spec(tmp_path, node_counts=(50, 60), seeds_per_point=3)
    rows = run_sweep(spec)
    agg = read_csv(tmp_path / "ade_vs_n.csv")
    assert len(agg) == 4
    for rec in agg:
        vals = [r["ade"] for r in rows if r["n"] == int(rec["n"]) and r["mode"] == rec["mode"]]
        mean, std, _ = mean_std(vals)
        assert float(rec["ade_mean"]) == mean
        assert float(rec["ade_std"]) == std


def test_byte_identical_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_sweep(small_spec(a, seeds_per_point=2))
    run_sweep(small_spec(b, seeds_per_point=2))
    for name in ("ade_vs_n.csv", "anlt_vs_n.csv", "delay_vs_time.csv", "bandwidth_vs_n.csv", "runs.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_parallel_matches_serial(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_sweep(small_spec(a, seeds_per_point=2))
    run_sweep(small_spec(b, seeds_per_point=2, workers=2))
    assert (a / "runs.csv").read_bytes() == (b / "runs.csv").read_bytes()


def test_failed_cell_recorded(tmp_path):
    spec = small_spec(tmp_path, modes=("dlmtc",), extra={"queue_limit": 0})
    rows = run_sweep(spec)
    assert len(rows) == 1 and "ValueError" in rows[0]["error"]
    assert "ValueError" in read_csv(tmp_path / "runs.csv")[0]["error"]
    agg = read_csv(tmp_path / "ade_vs_n.csv")
    assert agg[0]["runs"] == "0" and agg[0]["ade_mean"] == ""


def test_main_subcommands(tmp_path, monkeypatch, capsys):
    sc = tmp_path / "sc.json"
    assert main(["generate", "--nodes", "40", "--seed", "2", "--out", str(sc)]) == 0
    assert json.loads(sc.read_text())["seed"] == 2
    assert main(["run", str(sc), "--mode", "dlmt", "--horizon-s", "20", "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "metrics.json").exists()
    monkeypatch.setenv("DLMTC_OUT", str(tmp_path / "env"))
    code = main(["sweep", "--nodes", "50", "--seeds", "1", "--horizon-s", "30", "--check"])
    assert (tmp_path / "env" / "runs.csv").exists()
    out = capsys.readouterr().out
    assert "ade_dlmtc_lower" in out and code in (0, 1)
    assert main(["sweep", "--nodes", "50", "--seeds", "1", "--horizon-s", "30", "--modes", "dlmtc",
                 "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "runs.csv").exists()
