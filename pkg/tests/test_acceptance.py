"""Release criteria, one test per numbered criterion.

Each test files a one-line verdict through the `acceptance_report`
fixture (printed in the terminal summary) and then asserts.  Tolerances
are fixed here and nowhere else; the runtime budgets are asserted where
a criterion states one.

The reference scale is 2 UAVs, 8 users, 50 slots; the fleet-size study
extends to 6 UAVs.  Heavy trend criteria run the solvers with reduced
iteration budgets, which only makes the bar harder to clear: less
polishing, same required ordering.
"""

import dataclasses
import time

import numpy as np
import pytest
from scipy import stats

from uavmec import allocation as ra
from uavmec import channel as chn
from uavmec import cost_model as cm
from uavmec import harness as hz
from uavmec import offload as ol
from uavmec import optimizer as op
from uavmec import trajectory as tj
from uavmec.scenario import PropulsionParams, generate_tasks


SEEDS = tuple(range(20))

# reduced budgets for the many-hundreds-of-runs criteria
LEAN = dict(max_outer=10, sca_max_iters=3)


@pytest.fixture(scope="module")
def joint_runs(reference_scenario):
    """Twenty full joint runs at the reference scale, shared by the
    descent, convergence, and feasibility criteria."""
    t0 = time.perf_counter()
    runs = []
    for seed in SEEDS:
        tasks = generate_tasks(reference_scenario, seed)
        sol = op.run_policy("joint", reference_scenario, tasks, seed)
        runs.append((seed, tasks, sol))
    return {"runs": runs, "seconds": time.perf_counter() - t0}


def test_criterion_01_descent_invariant(joint_runs, acceptance_report):
    worst_rise = -np.inf
    for _, _, sol in joint_runs["runs"]:
        prev_end = None
        for entry in sol.history:
            chain = (entry["rho_start"], entry["rho_after_offload"],
                     entry["rho_after_allocation"],
                     entry["rho_after_trajectory"])
            if prev_end is not None:
                assert entry["rho_start"] == prev_end
            prev_end = chain[-1]
            for a, b in zip(chain, chain[1:]):
                worst_rise = max(worst_rise, (b - a) / max(1.0, abs(a)))
    secs = joint_runs["seconds"]
    ok = worst_rise <= 1e-9 and secs < 600.0
    acceptance_report(1, ok, f"max relative rise {worst_rise:.3e} across "
                             f"{len(SEEDS)} seeds, {secs:.1f}s")
    assert worst_rise <= 1e-9
    assert secs < 600.0


def test_criterion_02_convergence(joint_runs, acceptance_report):
    iters = [sol.iterations for _, _, sol in joint_runs["runs"]]
    all_converged = all(sol.converged for _, _, sol in joint_runs["runs"])
    ok = all_converged and max(iters) <= 100
    acceptance_report(2, ok, f"all converged={all_converged}, outer "
                             f"iterations {min(iters)}..{max(iters)}")
    assert all_converged
    assert max(iters) <= 100


def test_criterion_03_kkt_certificate(acceptance_report):
    rng = np.random.default_rng(11)
    cap = 1.2e9
    t0 = time.perf_counter()
    worst_res = worst_comp = worst_gap = 0.0
    for _ in range(200):
        k = int(rng.integers(1, 4))
        loads = rng.uniform(0.5e6 * 500, 3e6 * 1500, size=k)
        shares, lam = ra.allocate_group(loads, cap)
        for f, load in zip(shares, loads):
            scale = abs(ra.stationarity_residual(0.0, lam, load))
            res = abs(ra.stationarity_residual(f, lam, load)) / scale
            worst_res = max(worst_res, res)
        comp = abs(lam * (cap - shares.sum())) / max(lam * cap, 1e-12)
        worst_comp = max(worst_comp, comp)
        got = sum(ra.share_cost(f, l) for f, l in zip(shares, loads))
        _, ref = ra.grid_allocation_oracle(loads, cap)
        worst_gap = max(worst_gap, abs(got - ref) / abs(ref))
    secs = time.perf_counter() - t0
    ok = (worst_res <= 1e-6 and worst_comp <= 1e-6
          and worst_gap <= 1e-3 and secs < 60.0)
    acceptance_report(3, ok, f"stationarity {worst_res:.3e}, slackness "
                             f"{worst_comp:.3e}, oracle gap {worst_gap:.3e}, "
                             f"{secs:.1f}s")
    assert worst_res <= 1e-6
    assert worst_comp <= 1e-6
    assert worst_gap <= 1e-3
    assert secs < 60.0


def test_criterion_04_offload_oracle(acceptance_report):
    rng = np.random.default_rng(22)
    t0 = time.perf_counter()
    worst_gap = 0.0
    worst_zeta = 1.0
    n_integral = 0
    for _ in range(100):
        coeffs, quota = hz._random_offload_instance(rng, 18)
        frac = ol.solve_relaxed(coeffs, quota)
        fixed = ol.repair(ol.threshold_round(frac, 0.5), coeffs, quota)
        rep = ol.integrality_report(frac.objective, frac, fixed, coeffs,
                                    1.0, quota)
        _, best = ol.exact_offload_oracle(coeffs, quota, size_limit=18)
        got = coeffs.objective_of(fixed)
        gap = (got - best) / max(abs(best), 1e-9)
        worst_gap = max(worst_gap, gap)
        worst_zeta = min(worst_zeta, rep.zeta)
        integral = bool(np.all((frac.y <= 1e-9) | (frac.y >= 1.0 - 1e-9)))
        if integral:
            n_integral += 1
            assert got <= best + 1e-9 * max(1.0, abs(best))
    secs = time.perf_counter() - t0
    ok = worst_gap <= 0.05 and worst_zeta >= 1.0 - 1e-12 and secs < 120.0
    acceptance_report(4, ok, f"worst oracle gap {worst_gap:.3e}, min zeta "
                             f"{worst_zeta:.12f}, {n_integral}/100 integral "
                             f"relaxations, {secs:.1f}s")
    assert worst_gap <= 0.05
    assert worst_zeta >= 1.0 - 1e-12
    assert secs < 120.0


def test_criterion_05_surrogate_soundness(joint_runs, reference_scenario,
                                          acceptance_report):
    rng = np.random.default_rng(33)
    n = 10_000

    v = rng.uniform(-60, 60, size=(n, 2))
    vr = rng.uniform(-60, 60, size=(n, 2))
    true_sq = (v * v).sum(axis=1)
    over_speed = float((tj.speed_surrogate(v, vr) - true_sq).max())
    ref_sq = (vr * vr).sum(axis=1)
    eq_speed = float(np.abs(tj.speed_surrogate(vr, vr) - ref_sq).max()
                     / max(1.0, ref_sq.max()))

    qm = rng.uniform(0, 2500, size=(n, 2))
    qi = rng.uniform(0, 2500, size=(n, 2))
    qmr = rng.uniform(0, 2500, size=(n, 2))
    qir = rng.uniform(0, 2500, size=(n, 2))
    d = qm - qi
    sep_true = (d * d).sum(axis=1)
    over_sep = float((tj.separation_surrogate(qm, qi, qmr, qir)
                      - sep_true).max() / max(1.0, sep_true.max()))
    dr = qmr - qir
    ref_sep = (dr * dr).sum(axis=1)
    eq_sep = float(np.abs(tj.separation_surrogate(qmr, qir, qmr, qir)
                          - ref_sep).max() / max(1.0, ref_sep.max()))

    prop = PropulsionParams()
    under_ind = eq_ind = 0.0
    for i in range(n):
        vv, vvr = rng.uniform(-60, 60, 2), rng.uniform(-60, 60, 2)
        sur = tj.induced_speed_surrogate(vv, vvr, prop)
        true = cm.induced_power_factor(float(vv @ vv), prop)
        under_ind = max(under_ind, (true - sur) / max(1.0, abs(true)))
        if i < 2000:
            tight = tj.induced_speed_surrogate(vvr, vvr, prop)
            at_ref = cm.induced_power_factor(float(vvr @ vvr), prop)
            eq_ind = max(eq_ind, abs(tight - at_ref) / max(1.0, abs(at_ref)))

    # every accepted flight plan satisfies the original envelope exactly
    dyn_worst = 0.0
    feasible = True
    for _, tasks, sol in joint_runs["runs"]:
        audit = sol.traj.audit(reference_scenario, dyn_tol=1e-9)
        feasible &= audit.ok and not audit.violations
        dt = reference_scenario.time.slot_s
        drift = sol.traj.q[:, 1:] - sol.traj.q[:, :-1] \
            - 0.5 * dt * (sol.traj.v[:, 1:] + sol.traj.v[:, :-1])
        dyn_worst = max(dyn_worst, float(np.abs(drift).max()))
        speeds = sol.traj.speeds()
        for mi, uav in enumerate(reference_scenario.uavs):
            feasible &= bool(speeds[mi].max() <= uav.v_max_mps)
            feasible &= bool(speeds[mi].min() >= uav.v_min_mps)
        gap = np.linalg.norm(sol.traj.q[0] - sol.traj.q[1], axis=1)
        feasible &= bool(
            gap.min() >= reference_scenario.uavs[0].min_separation_m)
        cm.evaluate(reference_scenario, tasks, sol.offload, sol.alloc, sol.traj,
                    check="strict")

    ok = (over_speed <= 1e-12 and eq_speed <= 1e-12
          and over_sep <= 1e-12 and eq_sep <= 1e-12
          and under_ind <= 1e-12 and eq_ind <= 1e-12
          and feasible and dyn_worst <= 1e-9)
    acceptance_report(5, ok, f"surrogate overshoot {over_speed:.1e}/"
                             f"{over_sep:.1e}/{under_ind:.1e}, expansion gap "
                             f"{max(eq_speed, eq_sep, eq_ind):.1e}, dynamics "
                             f"drift {dyn_worst:.1e}, envelopes exact="
                             f"{feasible}")
    assert over_speed <= 1e-12 and over_sep <= 1e-12 and under_ind <= 1e-12
    assert eq_speed <= 1e-12 and eq_sep <= 1e-12 and eq_ind <= 1e-12
    assert feasible
    assert dyn_worst <= 1e-9


def test_criterion_06_channel_consistency(acceptance_report):
    geom = chn.LinkGeometry(horiz_dist_m=300.0, altitude_m=100.0)
    quiet = dataclasses.replace(chn.ChannelParams(), shadow_std_los_db=0.0,
                                shadow_std_nlos_db=0.0)
    rng = np.random.default_rng(np.random.SeedSequence(6))
    samples = chn.sample_channel_gain(geom, quiet, rng, size=1_000_000)
    expected = chn.expected_channel_gain(geom, quiet)
    mc_rel = abs(float(samples.mean()) - expected) / expected

    # shape-1 fading with a flat mixture is exactly exponential
    flat = dataclasses.replace(quiet, pathloss_exp_nlos=2.0,
                               nakagami_los=1.0)
    rng = np.random.default_rng(np.random.SeedSequence(6))
    draws = chn.sample_channel_gain(geom, flat, rng, size=100_000)
    scale = chn.expected_channel_gain(geom, flat)
    _, p_value = stats.kstest(draws, "expon", args=(0.0, scale))

    ok = mc_rel < 0.01 and p_value > 0.01
    acceptance_report(6, ok, f"MC mean off by {mc_rel:.5f} rel, "
                             f"exponential GoF p={p_value:.3f}")
    assert mc_rel < 0.01
    assert p_value > 0.01


def test_criterion_07_propulsion_interior_minimum(acceptance_report):
    speeds = np.linspace(0.0, 60.0, 601)
    power = cm.propulsion_power(speeds, PropulsionParams())
    interior = float(power[1:-1].min())
    edge = min(float(power[0]), float(power[-1]))
    ok = interior < edge
    acceptance_report(7, ok, f"min {interior:.2f} W at "
                             f"{speeds[power.argmin()]:.1f} m/s vs "
                             f"{edge:.2f} W at the endpoints")
    assert interior < edge


def test_criterion_08_fleet_size_ordering(reference_scenario, acceptance_report):
    t0 = time.perf_counter()
    wins = total = 0
    for count in (2, 4, 6):
        scn = hz.apply_axis(reference_scenario, "uav_count", count)
        table = op.compare(scn, seeds=SEEDS, **LEAN)
        joint = {r["seed"]: r["objective"] for r in table.rows
                 if r["policy"] == "joint"}
        for r in table.rows:
            if r["policy"] == "joint":
                continue
            total += 1
            if joint[r["seed"]] <= r["objective"] + 1e-12:
                wins += 1
    secs = time.perf_counter() - t0
    rate = wins / total
    ok = rate >= 0.9 and total == 360 and secs < 3600.0
    acceptance_report(8, ok, f"joint wins {wins}/{total} "
                             f"({rate:.3f}), {secs:.0f}s")
    assert total == 360
    assert rate >= 0.9
    assert secs < 3600.0


def test_criterion_09_size_and_intensity_monotone(reference_scenario, tmp_path,
                                                  acceptance_report):
    grids = {
        "task_size": (0.5e6, 1.125e6, 1.75e6, 2.375e6, 3.0e6),
        "task_intensity": (500.0, 750.0, 1000.0, 1250.0, 1500.0),
    }
    worst = 1.0
    worst_at = ""
    for axis, values in grids.items():
        spec = hz.SweepSpec(axis=axis, values=values,
                            seeds=tuple(range(10)), policies=op.POLICIES)
        records = hz.run_sweep(reference_scenario, spec, tmp_path / axis, **LEAN)
        assert all(not r.error for r in records)
        for policy in op.POLICIES:
            for metric in ("objective", "delay_s", "energy_j"):
                means = []
                for v in values:
                    vals = [getattr(r, metric) for r in records
                            if r.policy == policy and r.value == float(v)]
                    assert len(vals) == 10
                    means.append(sum(vals) / len(vals))
                rho = float(stats.spearmanr(values, means).statistic)
                if rho < worst:
                    worst = rho
                    worst_at = f"{axis}/{policy}/{metric}"
    # 5 untied points make rho discrete with 0.1 spacing, so this guard only
    # absorbs float error in spearmanr (an exact 9/10 evaluates ~2e-16 low);
    # it cannot admit an ordering the exact >= 0.9 bound would reject
    ok = worst >= 0.9 - 1e-9
    acceptance_report(9, ok, f"min Spearman {worst:.3f}"
                             + (f" at {worst_at}" if worst_at else ""))
    assert ok, worst_at


def test_criterion_10_offloaded_bits_flat_in_cpu(reference_scenario,
                                                 acceptance_report):
    values = (0.6e9, 0.9e9, 1.2e9, 1.5e9, 1.8e9)
    low = hz.apply_axis(reference_scenario, "uav_cpu_max", values[0])
    tasks = generate_tasks(low, 0)
    offload = op.nearest_offload(low, tasks)
    traj = tj.initial_trajectory(low)
    bits = []
    for v in values:
        scn = hz.apply_axis(reference_scenario, "uav_cpu_max", v)
        alloc = op._even_split(scn, offload)
        rec = cm.evaluate(scn, tasks, offload, alloc, traj, check="strict")
        bits.append(rec.total_offloaded_bits)
    spread = max(bits) - min(bits)
    ok = spread == 0.0 and bits[0] > 0.0
    acceptance_report(10, ok, f"offloaded bits {bits[0]:.6e} across "
                              f"{len(values)} cpu levels, spread {spread}")
    assert bits[0] > 0.0
    assert spread == 0.0


def test_criterion_11_determinism_and_resume(reference_scenario, tmp_path,
                                             acceptance_report):
    spec = hz.SweepSpec(axis="task_size", values=(1.0e6, 2.0e6), seeds=(0,),
                        policies=("fixed_circular",))
    budgets = dict(max_outer=2, sca_max_iters=2)
    a = hz.run_sweep(reference_scenario, spec, tmp_path / "a", **budgets)
    b = hz.run_sweep(reference_scenario, spec, tmp_path / "b", **budgets)

    def stripped(records):
        out = []
        for r in records:
            d = dataclasses.asdict(r)
            d.pop("wallclock_ms")
            out.append(d)
        return out

    identical = stripped(a) == stripped(b)
    byte_equal = all(
        (tmp_path / "a" / f"task_size_{m}.csv").read_bytes()
        == (tmp_path / "b" / f"task_size_{m}.csv").read_bytes()
        for m in hz.METRIC_FIELDS)

    hz.run_sweep(reference_scenario, spec, tmp_path / "c", **budgets)
    path = tmp_path / "c" / "records.ndjson"
    first_line = path.read_text().split("\n")[0]
    path.write_text(first_line + "\n")
    resumed = hz.run_sweep(reference_scenario, spec, tmp_path / "c",
                           resume=True, **budgets)
    resume_equal = stripped(resumed) == stripped(a)
    resume_bytes = all(
        (tmp_path / "c" / f"task_size_{m}.csv").read_bytes()
        == (tmp_path / "a" / f"task_size_{m}.csv").read_bytes()
        for m in hz.METRIC_FIELDS)

    ok = identical and byte_equal and resume_equal and resume_bytes
    acceptance_report(11, ok, f"repeat run equal={identical}, aggregate "
                              f"bytes equal={byte_equal}, resumed equal="
                              f"{resume_equal and resume_bytes}")
    assert identical
    assert byte_equal
    assert resume_equal
    assert resume_bytes
