"""Experiment sweeps, the oracle gate, and plot-ready data emission.

A sweep varies one scenario axis over a value grid, runs every requested
policy and seed at each point, and persists raw records as
newline-delimited JSON next to per-metric aggregate CSVs.  Everything is
deterministic given (config, seeds): records are canonically ordered
before the final write, and the aggregate CSVs are byte-stable.  Wallclock
fields live only in the raw records and are excluded from that promise.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import allocation as ra
from . import channel as chn
from . import cost_model as cm
from . import offload as ol
from . import optimizer as opt
from .scenario import (Scenario, TaskSchedule, default_user_layout,
                       default_uav_layout, generate_tasks)

SCHEMA_VERSION = 1

AXES = ("uav_count", "uav_cpu_max", "task_intensity", "task_size",
        "user_count")

METRIC_FIELDS = ("objective", "delay_s", "energy_j", "offloaded_bits")


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    seeds: tuple = (0,)
    policies: tuple = opt.POLICIES

    def validate(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not self.values:
            raise ValueError("values must be nonempty")
        if list(self.values) != sorted(self.values):
            raise ValueError("values must be sorted ascending")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        unknown = set(self.policies) - set(opt.POLICIES)
        if unknown:
            raise ValueError(f"unknown policies {sorted(unknown)}")
        return self


@dataclass
class RunRecord:
    axis: str
    value: float
    policy: str
    seed: int
    objective: float
    delay_s: float
    energy_j: float
    offloaded_bits: float
    iterations: int
    converged: bool
    wallclock_ms: float
    error: str = ""
    schema_version: int = SCHEMA_VERSION

    def key(self):
        return (self.axis, self.value, self.policy, self.seed)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True,
                          separators=(",", ":"))

    @staticmethod
    def from_json(line: str) -> "RunRecord":
        return RunRecord(**json.loads(line))


def apply_axis(base: Scenario, axis: str, value) -> Scenario:
    """Scenario with one experiment axis moved to `value`."""
    if axis == "uav_count":
        count = int(value)
        template = base.uavs[0]
        positions = default_uav_layout(count, base.area_m)
        uavs = tuple(dataclasses.replace(template, initial_position_m=p)
                     for p in positions)
        return dataclasses.replace(base, uavs=uavs)
    if axis == "uav_cpu_max":
        uavs = tuple(dataclasses.replace(m, cpu_max_hz=float(value))
                     for m in base.uavs)
        return dataclasses.replace(base, uavs=uavs)
    if axis == "task_intensity":
        tasks = dataclasses.replace(base.tasks,
                                    intensity_range=(float(value),
                                                     float(value)))
        return dataclasses.replace(base, tasks=tasks)
    if axis == "task_size":
        tasks = dataclasses.replace(base.tasks,
                                    size_bits_range=(float(value),
                                                     float(value)))
        return dataclasses.replace(base, tasks=tasks)
    if axis == "user_count":
        count = int(value)
        template = base.users[0]
        positions = default_user_layout(count, base.area_m)
        users = tuple(dataclasses.replace(template, position_m=p)
                      for p in positions)
        return dataclasses.replace(base, users=users)
    raise ValueError(f"unknown axis {axis!r}")


def _records_path(out_dir):
    return os.path.join(out_dir, "records.ndjson")


def load_records(out_dir) -> list:
    path = _records_path(out_dir)
    if not os.path.exists(path):
        return []
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(RunRecord.from_json(line))
    return records


def run_sweep(base_scenario: Scenario, spec: SweepSpec, out_dir, *,
              resume=False, jobs=1, progress=None, epsilon=None,
              max_outer=None, sca_max_iters=None) -> list:
    """Run (or resume) one sweep; returns all records in canonical order.

    Each finished cell is appended to records.ndjson immediately, so an
    interrupted sweep resumes from where it stopped.  Failures become
    records with an error string; the sweep keeps going.
    """
    spec.validate()
    os.makedirs(out_dir, exist_ok=True)
    path = _records_path(out_dir)
    # fail before any compute if the output is not writable
    with open(path, "a", encoding="utf-8"):
        pass

    done = {}
    if resume:
        for rec in load_records(out_dir):
            done[rec.key()] = rec
    else:
        open(path, "w", encoding="utf-8").close()

    cells = [(v, p, s) for v in spec.values for p in spec.policies
             for s in spec.seeds]
    todo = [(v, p, s) for (v, p, s) in cells
            if (spec.axis, float(v), p, int(s)) not in done]

    runner = _run_cell
    results = dict(done)
    if jobs > 1 and todo:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {pool.submit(runner, base_scenario, spec.axis, v, p, s,
                                epsilon, max_outer, sca_max_iters): (v, p, s)
                    for (v, p, s) in todo}
            with open(path, "a", encoding="utf-8") as fh:
                for fut in cf.as_completed(futs):
                    rec = fut.result()
                    results[rec.key()] = rec
                    fh.write(rec.to_json() + "\n")
                    fh.flush()
                    if progress:
                        progress(rec)
    else:
        with open(path, "a", encoding="utf-8") as fh:
            for (v, p, s) in todo:
                rec = runner(base_scenario, spec.axis, v, p, s, epsilon,
                             max_outer, sca_max_iters)
                results[rec.key()] = rec
                fh.write(rec.to_json() + "\n")
                fh.flush()
                if progress:
                    progress(rec)

    ordered = _canonical_order(results.values(), spec)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in ordered:
            fh.write(rec.to_json() + "\n")
    emit_plots_data(ordered, spec, out_dir)
    return ordered


def _canonical_order(records, spec):
    v_rank = {float(v): i for i, v in enumerate(spec.values)}
    p_rank = {p: i for i, p in enumerate(spec.policies)}
    return sorted(records, key=lambda r: (
        v_rank.get(r.value, len(v_rank)),
        p_rank.get(r.policy, len(p_rank)), r.seed))


def _run_cell(base, axis, value, policy, seed, epsilon, max_outer,
              sca_max_iters) -> RunRecord:
    t0 = time.perf_counter()
    try:
        scenario = apply_axis(base, axis, value)
        tasks = generate_tasks(scenario, int(seed))
        sol = opt.run_policy(policy, scenario, tasks, int(seed),
                             epsilon=epsilon, max_outer=max_outer,
                             sca_max_iters=sca_max_iters)
        ms = (time.perf_counter() - t0) * 1e3
        return RunRecord(axis=axis, value=float(value), policy=policy,
                         seed=int(seed),
                         objective=float(sol.metrics.objective),
                         delay_s=float(sol.metrics.total_delay_s),
                         energy_j=float(sol.metrics.total_uav_energy_j),
                         offloaded_bits=float(
                             sol.metrics.total_offloaded_bits),
                         iterations=int(sol.iterations),
                         converged=bool(sol.converged), wallclock_ms=ms)
    except Exception as exc:
        ms = (time.perf_counter() - t0) * 1e3
        return RunRecord(axis=axis, value=float(value), policy=policy,
                         seed=int(seed), objective=math.nan,
                         delay_s=math.nan, energy_j=math.nan,
                         offloaded_bits=math.nan, iterations=0,
                         converged=False, wallclock_ms=ms,
                         error=f"{type(exc).__name__}: {exc}")


def emit_plots_data(records, spec: SweepSpec, out_dir) -> dict:
    """One aggregate CSV per metric: (x_value, policy, mean, stddev,
    n_seeds), rows in sweep order.  Uses population stddev so a single
    seed reports exactly zero."""
    paths = {}
    good = [r for r in records if not r.error]
    for metric in METRIC_FIELDS:
        lines = ["x_value,policy,mean,stddev,n_seeds"]
        for v in spec.values:
            for p in spec.policies:
                vals = [getattr(r, metric) for r in good
                        if r.value == float(v) and r.policy == p]
                if not vals:
                    continue
                mean = sum(vals) / len(vals)
                var = sum((x - mean) ** 2 for x in vals) / len(vals)
                lines.append(f"{float(v)!r},{p},{mean!r},"
                             f"{math.sqrt(var)!r},{len(vals)}")
        path = os.path.join(out_dir, f"{spec.axis}_{metric}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        paths[metric] = path
    return paths


# ---------------------------------------------------------------------------
# oracle gate

def oracle_suite(size_limit=18, *, seed=0, mc_samples=1_000_000,
                 n_offload_instances=25, n_alloc_instances=50,
                 _corrupt_stationarity=False) -> dict:
    """Every solver-vs-reference comparison in one machine-readable report.

    The `_corrupt_stationarity` hook scores the allocation residual at a
    deliberately wrong share so tests can confirm the gate actually bites.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    checks = []

    # -- offloading: pipeline vs exhaustive enumeration --
    worst_gap = 0.0
    worst_zeta = 1.0
    ok = True
    detail = ""
    for i in range(n_offload_instances):
        coeffs, quota = _random_offload_instance(rng, size_limit)
        frac = ol.solve_relaxed(coeffs, quota)
        rounded = ol.threshold_round(frac, 0.5)
        fixed = ol.repair(rounded, coeffs, quota)
        rep = ol.integrality_report(frac.objective, frac, fixed, coeffs,
                                    1.0, quota)
        _, best = ol.exact_offload_oracle(coeffs, quota,
                                          size_limit=size_limit)
        got = coeffs.objective_of(fixed)
        gap = (got - best) / max(abs(best), 1e-9)
        worst_gap = max(worst_gap, gap)
        worst_zeta = min(worst_zeta, rep.zeta)
        if gap > 0.05 or rep.zeta < 1.0 - 1e-12:
            ok = False
            detail = f"instance {i}: gap {gap:.3e}, zeta {rep.zeta:.6f}"
    checks.append({"name": "offload_vs_exhaustive", "passed": ok,
                   "max_deviation": worst_gap,
                   "detail": detail or f"min zeta {worst_zeta:.6f}"})

    # -- allocation: bisection vs grid oracle + stationarity --
    ok = True
    worst = 0.0
    detail = ""
    for i in range(n_alloc_instances):
        k = int(rng.integers(1, 4))
        loads = rng.uniform(0.5e6 * 500, 3e6 * 1500, size=k)
        cap = 1.2e9
        shares, lam = ra.allocate_group(loads, cap)
        _, ref = ra.grid_allocation_oracle(loads, cap)
        got = sum(ra.share_cost(f, l) for f, l in zip(shares, loads))
        rel = (got - ref) / max(abs(ref), 1e-12)
        worst = max(worst, rel)
        for f, load in zip(shares, loads):
            if f >= cap * (1.0 - 1e-9):
                continue  # clipped at capacity, stationarity inactive
            f_scored = 0.9 * f if _corrupt_stationarity else f
            res = ra.stationarity_residual(f_scored, lam, load)
            scale = max(abs(ra.stationarity_residual(0.0, lam, load)), 1e-12)
            if abs(res) / scale > 1e-6:
                ok = False
                detail = f"instance {i}: residual {res / scale:.3e}"
        if rel > 1e-3:
            ok = False
            detail = f"instance {i}: gap {rel:.3e}"
    checks.append({"name": "allocation_vs_grid", "passed": ok,
                   "max_deviation": worst, "detail": detail})

    # -- channel: Monte-Carlo mean vs closed form (shadowing off) --
    params = dataclasses.replace(chn.ChannelParams(), shadow_std_los_db=0.0,
                                 shadow_std_nlos_db=0.0)
    geom = chn.LinkGeometry(horiz_dist_m=300.0, altitude_m=100.0)
    samples = chn.sample_channel_gain(geom, params, rng, size=mc_samples)
    expected = chn.expected_channel_gain(geom, params)
    rel = abs(samples.mean() - expected) / expected
    checks.append({"name": "channel_mc_mean", "passed": bool(rel < 0.01),
                   "max_deviation": float(rel), "detail": ""})

    # -- propulsion: interior minimum on a grid --
    prop = cm.propulsion_power(np.linspace(0.0, 60.0, 601),
                               _default_propulsion())
    interior = prop[1:-1].min() < min(prop[0], prop[-1])
    checks.append({"name": "propulsion_interior_min",
                   "passed": bool(interior),
                   "max_deviation": 0.0,
                   "detail": f"min {prop.min():.2f} W at "
                             f"{0.1 * prop.argmin():.1f} m/s"})

    return {"passed": all(c["passed"] for c in checks), "checks": checks}


def _default_propulsion():
    from .scenario import PropulsionParams
    return PropulsionParams()


def _random_offload_instance(rng, size_limit):
    """Small random coefficient table with the structure the real pipeline
    produces: finite local costs, offload costs that can win or lose, a
    sprinkling of masked cells."""
    while True:
        u = int(rng.integers(1, 4))
        m = int(rng.integers(1, 4))
        n = int(rng.integers(1, 4))
        if u * m * n <= size_limit:
            break
    c_local = rng.uniform(0.5, 2.0, size=(u, n))
    c_off = rng.uniform(-1.0, 2.5, size=(m, u, n))
    t_off = rng.uniform(0.05, 0.5, size=(m, u, n))
    deadline = rng.uniform(0.4, 1.0, size=u)
    # dead cells and deadline-infeasible cells are priced out, exactly as
    # the real coefficient builder does
    mask = (rng.random((m, u, n)) < 0.15) \
        | (t_off > deadline[None, :, None])
    c_off = np.where(mask, np.inf, c_off)
    coeffs = ol.CoefficientSet(
        c_local=c_local, c_offload=c_off, t_local=c_local * 0.3,
        t_offload=np.where(mask, np.inf, t_off), deadline_s=deadline,
        f_pricing_hz=np.full((m, u, n), 1.2e9))
    quota = int(rng.integers(1, 3))
    return coeffs, quota
