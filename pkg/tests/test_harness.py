"""Sweep persistence, resume, aggregation, and the oracle gate."""

import dataclasses
import json
import os

import pytest

from uavmec import harness as hz
from uavmec import optimizer as opt


def lean(**kw):
    kw.setdefault("max_outer", 1)
    kw.setdefault("sca_max_iters", 1)
    return kw


def spec_2x1():
    return hz.SweepSpec(axis="task_size", values=(1.0e6, 2.0e6),
                        seeds=(0,), policies=("fixed_circular",))


def strip_wallclock(records):
    out = []
    for r in records:
        d = dataclasses.asdict(r)
        d.pop("wallclock_ms")
        out.append(d)
    return out


def test_sweep_spec_validation():
    good = hz.SweepSpec(axis="task_size", values=(1e6,), seeds=(0,))
    assert good.validate() is good
    with pytest.raises(ValueError, match="axis"):
        hz.SweepSpec(axis="altitude", values=(1.0,)).validate()
    with pytest.raises(ValueError, match="nonempty"):
        hz.SweepSpec(axis="task_size", values=()).validate()
    with pytest.raises(ValueError, match="ascending"):
        hz.SweepSpec(axis="task_size", values=(2e6, 1e6)).validate()
    with pytest.raises(ValueError, match="seeds"):
        hz.SweepSpec(axis="task_size", values=(1e6,), seeds=()).validate()
    with pytest.raises(ValueError, match="unknown policies"):
        hz.SweepSpec(axis="task_size", values=(1e6,),
                     policies=("greedy",)).validate()


def test_apply_axis_all_axes(reference_scenario):
    four = hz.apply_axis(reference_scenario, "uav_count", 4)
    assert four.n_uavs == 4
    assert four.uavs[0].cpu_max_hz == reference_scenario.uavs[0].cpu_max_hz

    cpu = hz.apply_axis(reference_scenario, "uav_cpu_max", 0.6e9)
    assert all(m.cpu_max_hz == 0.6e9 for m in cpu.uavs)

    inten = hz.apply_axis(reference_scenario, "task_intensity", 900.0)
    assert inten.tasks.intensity_range == (900.0, 900.0)

    size = hz.apply_axis(reference_scenario, "task_size", 1.5e6)
    assert size.tasks.size_bits_range == (1.5e6, 1.5e6)

    users = hz.apply_axis(reference_scenario, "user_count", 12)
    assert users.n_users == 12

    with pytest.raises(ValueError, match="unknown axis"):
        hz.apply_axis(reference_scenario, "altitude", 50.0)


def test_run_record_roundtrip():
    rec = hz.RunRecord(axis="task_size", value=1e6, policy="joint", seed=3,
                       objective=0.5, delay_s=2.0, energy_j=100.0,
                       offloaded_bits=1e7, iterations=4, converged=True,
                       wallclock_ms=12.5)
    back = hz.RunRecord.from_json(rec.to_json())
    assert back == rec
    assert rec.key() == ("task_size", 1e6, "joint", 3)
    assert json.loads(rec.to_json())["schema_version"] == hz.SCHEMA_VERSION


def test_load_records_missing_dir(tmp_path):
    assert hz.load_records(tmp_path / "nowhere") == []


def test_run_sweep_persists_and_aggregates(tiny_scenario, tmp_path):
    out = tmp_path / "sweep"
    records = hz.run_sweep(tiny_scenario, spec_2x1(), out, **lean())
    assert len(records) == 2
    assert [r.value for r in records] == [1.0e6, 2.0e6]
    assert all(not r.error for r in records)

    reloaded = hz.load_records(out)
    assert strip_wallclock(reloaded) == strip_wallclock(records)

    for metric in hz.METRIC_FIELDS:
        path = out / f"task_size_{metric}.csv"
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "x_value,policy,mean,stddev,n_seeds"
        assert len(lines) == 3
        for line, rec in zip(lines[1:], records):
            x, policy, mean, stddev, n = line.split(",")
            assert float(x) == rec.value
            assert policy == "fixed_circular"
            assert float(mean) == getattr(rec, metric)
            assert float(stddev) == 0.0   # single seed
            assert n == "1"


def test_resume_skips_finished_cells(tiny_scenario, tmp_path):
    out = tmp_path / "sweep"
    first = hz.run_sweep(tiny_scenario, spec_2x1(), out, **lean())
    reran = []
    again = hz.run_sweep(tiny_scenario, spec_2x1(), out, resume=True,
                         progress=reran.append, **lean())
    assert reran == []
    assert strip_wallclock(again) == strip_wallclock(first)


def test_resume_after_truncation(tiny_scenario, tmp_path):
    full_dir = tmp_path / "full"
    full = hz.run_sweep(tiny_scenario, spec_2x1(), full_dir, **lean())

    cut_dir = tmp_path / "cut"
    hz.run_sweep(tiny_scenario, spec_2x1(), cut_dir, **lean())
    path = cut_dir / "records.ndjson"
    first_line = path.read_text().split("\n")[0]
    path.write_text(first_line + "\n")

    reran = []
    resumed = hz.run_sweep(tiny_scenario, spec_2x1(), cut_dir, resume=True,
                           progress=reran.append, **lean())
    assert len(reran) == 1                # only the lost cell again
    assert strip_wallclock(resumed) == strip_wallclock(full)
    for metric in hz.METRIC_FIELDS:
        a = (full_dir / f"task_size_{metric}.csv").read_bytes()
        b = (cut_dir / f"task_size_{metric}.csv").read_bytes()
        assert a == b


def test_sweep_byte_determinism(tiny_scenario, tmp_path):
    a = hz.run_sweep(tiny_scenario, spec_2x1(), tmp_path / "a", **lean())
    b = hz.run_sweep(tiny_scenario, spec_2x1(), tmp_path / "b", **lean())
    assert strip_wallclock(a) == strip_wallclock(b)
    for metric in hz.METRIC_FIELDS:
        assert (tmp_path / "a" / f"task_size_{metric}.csv").read_bytes() == \
               (tmp_path / "b" / f"task_size_{metric}.csv").read_bytes()


def test_sweep_records_failures_and_continues(tiny_scenario, tmp_path,
                                              monkeypatch):
    real = opt.run_policy

    def flaky(policy_id, scenario, tasks, seed=0, **kw):
        if policy_id == "fixed_racetrack":
            raise RuntimeError("boom")
        return real(policy_id, scenario, tasks, seed, **kw)

    monkeypatch.setattr(hz.opt, "run_policy", flaky)
    spec = hz.SweepSpec(axis="task_size", values=(1.0e6,), seeds=(0,),
                        policies=("fixed_circular", "fixed_racetrack"))
    records = hz.run_sweep(tiny_scenario, spec, tmp_path / "s", **lean())
    by_policy = {r.policy: r for r in records}
    assert by_policy["fixed_circular"].error == ""
    bad = by_policy["fixed_racetrack"]
    assert "RuntimeError: boom" in bad.error
    assert bad.objective != bad.objective     # nan
    # failed rows stay out of the aggregates
    lines = (tmp_path / "s" / "task_size_objective.csv").read_text() \
        .strip().split("\n")
    assert len(lines) == 2
    assert ",fixed_circular," in lines[1]


def test_emit_plots_data_statistics(tmp_path):
    spec = hz.SweepSpec(axis="task_size", values=(1.0e6,), seeds=(0, 1),
                        policies=("joint",))
    rows = []
    for seed, obj in ((0, 1.0), (1, 3.0)):
        rows.append(hz.RunRecord(
            axis="task_size", value=1.0e6, policy="joint", seed=seed,
            objective=obj, delay_s=obj, energy_j=obj, offloaded_bits=obj,
            iterations=1, converged=True, wallclock_ms=0.0))
    paths = hz.emit_plots_data(rows, spec, tmp_path)
    line = open(paths["objective"]).read().strip().split("\n")[1]
    x, policy, mean, stddev, n = line.split(",")
    assert float(mean) == 2.0
    assert float(stddev) == 1.0           # population, not sample
    assert n == "2"


def test_oracle_suite_small_passes():
    res = hz.oracle_suite(size_limit=8, seed=0, mc_samples=100_000,
                          n_offload_instances=4, n_alloc_instances=6)
    assert res["passed"]
    names = {c["name"] for c in res["checks"]}
    assert names == {"offload_vs_exhaustive", "allocation_vs_grid",
                     "channel_mc_mean", "propulsion_interior_min"}
    assert all(c["passed"] for c in res["checks"])


def test_oracle_suite_catches_planted_fault():
    res = hz.oracle_suite(size_limit=8, seed=0, mc_samples=100_000,
                          n_offload_instances=4, n_alloc_instances=6,
                          _corrupt_stationarity=True)
    assert not res["passed"]
    flags = {c["name"]: c["passed"] for c in res["checks"]}
    assert flags["allocation_vs_grid"] is False
