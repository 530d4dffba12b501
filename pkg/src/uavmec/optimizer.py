"""Outer alternation over offloads, CPU shares, and flight plans.

One engine drives every policy.  The joint policy lets all three blocks
move; each baseline pins one block (a fixed offload rule, an even CPU
split, or a frozen flight plan) and runs the remaining sub-solvers
unchanged, so comparisons isolate the value of optimizing each block.

Descent bookkeeping: the objective is recorded before the iteration and
after each sub-step.  Offload pricing carries the currently granted CPU
share for cells that stay assigned and an even quota split for new cells,
which keeps the offload step an exact minimizer of the true objective at
that pricing; every sub-step additionally keeps its previous block as a
fallback, so the recorded chain never increases beyond roundoff.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import allocation as ra
from . import cost_model as cm
from . import offload as ol
from . import trajectory as tj
from .cost_model import AllocationMatrix, OffloadMatrix, TrajectoryPlan
from .scenario import Scenario, TaskSchedule, generate_tasks

POLICIES = ("joint", "random_offload", "nearest_offload", "matched_offload",
            "even_cpu", "fixed_circular", "fixed_racetrack")


@dataclass
class Solution:
    offload: OffloadMatrix
    alloc: AllocationMatrix
    traj: TrajectoryPlan
    metrics: cm.MetricsRecord
    history: list
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)


def _objective(scenario, tasks, a, f, q, w):
    return cm.evaluate(scenario, tasks, a, f, q, weights=w,
                       check="off").objective


def _masked(price_hz, offload: OffloadMatrix) -> AllocationMatrix:
    sel = np.transpose(offload.a, (1, 0, 2)).astype(bool)
    return AllocationMatrix(np.where(sel, price_hz, 0.0))


def deadline_floors(scenario: Scenario, tasks: TaskSchedule,
                    offload: OffloadMatrix, traj: TrajectoryPlan) -> np.ndarray:
    """Minimum CPU shares (M, U, N) that keep every assigned task inside
    its deadline at the current flight plan.  Zero where unassigned."""
    rates = cm.link_rates(scenario, traj)
    floors = np.zeros((scenario.n_uavs, tasks.n_users, tasks.n_slots))
    for mi in range(scenario.n_uavs):
        for n in range(tasks.n_slots):
            for u in np.flatnonzero(offload.a[:, mi, n]):
                d = tasks.size_bits[u, n]
                slack = tasks.deadline_s[u] - d / rates[u, mi, n]
                if slack <= 0:
                    raise cm.ConstraintViolationError(
                        "offload.deadline", (u, mi, n), -slack)
                floors[mi, u, n] = tasks.cycles[u, n] / slack
    return floors


def _even_split(scenario, offload: OffloadMatrix) -> AllocationMatrix:
    """The even-split CPU rule: each UAV divides its budget over the users
    it serves in that slot."""
    m_count, u_count, n_count = (scenario.n_uavs, offload.a.shape[0],
                                 offload.a.shape[2])
    f = np.zeros((m_count, u_count, n_count))
    counts = offload.load()
    for mi, uav in enumerate(scenario.uavs):
        for n in range(n_count):
            k = counts[mi, n]
            if k:
                f[mi, offload.a[:, mi, n].astype(bool), n] = uav.cpu_max_hz / k
    return AllocationMatrix(f)


def _alternate(scenario: Scenario, tasks: TaskSchedule, w, *,
               a_mode="solve", f_mode="solve", q_mode="sca",
               a_fixed=None, traj_kind="circular", epsilon=None,
               max_outer=None, sca_max_iters=None) -> Solution:
    sp = scenario.solver
    epsilon = epsilon if epsilon is not None else sp.epsilon
    max_outer = max_outer if max_outer is not None else sp.max_outer
    quota = sp.max_users_per_uav
    if w.normalizers is None:
        w = w.with_normalizers(cm.normalizers(scenario, tasks))

    u_count, m_count, n_count = (scenario.n_users, scenario.n_uavs,
                                 scenario.time.n_slots)
    traj = tj.initial_trajectory(scenario, traj_kind)
    if a_fixed is not None:
        a_cur = a_fixed
        price0 = ol.pricing_allocation(
            scenario, OffloadMatrix.all_local(u_count, m_count, n_count),
            AllocationMatrix.zeros(m_count, u_count, n_count))
        f_cur = _even_split(scenario, a_cur) if f_mode == "even" \
            else _masked(price0, a_cur)
    else:
        a_cur = OffloadMatrix.all_local(u_count, m_count, n_count)
        f_cur = AllocationMatrix.zeros(m_count, u_count, n_count)

    subproblem = None
    if q_mode == "sca":
        subproblem = tj.compiled_subproblem(scenario, quota, w)

    rho = _objective(scenario, tasks, a_cur, f_cur, traj, w)
    best = (rho, a_cur, f_cur, traj)
    history = []
    diagnostics = {"descent_violations": [], "sca_stalls": 0}
    converged = False
    iterations = 0

    for it in range(max_outer):
        rho_start = rho
        entry = {"iteration": it, "rho_start": rho_start}

        # -- offload block --
        if a_mode == "solve":
            if f_mode == "even":
                price = np.zeros((m_count, u_count, n_count))
                for mi, uav in enumerate(scenario.uavs):
                    price[mi] = uav.cpu_max_hz / quota
            else:
                price = ol.pricing_allocation(scenario, a_cur, f_cur)
            result = ol.plan_offload(scenario, tasks, price, traj, weights=w)
            a_new = result["repaired"]
            coeffs = result["coefficients"]
            # the previous plan is still available under this pricing
            if coeffs.objective_of(a_new) > coeffs.objective_of(a_cur):
                a_new = a_cur
            f_chain = _even_split(scenario, a_new) if f_mode == "even" \
                else _masked(price, a_new)
            rho_a = _objective(scenario, tasks, a_new, f_chain, traj, w)
            entry["rounding"] = result["report_post_repair"]
        else:
            a_new, f_chain, rho_a = a_cur, f_cur, rho_start
        entry["rho_after_offload"] = rho_a

        # -- CPU block --
        if f_mode == "solve":
            floors = deadline_floors(scenario, tasks, a_new, traj)
            f_new, duals = ra.allocate(scenario, tasks, a_new,
                                       floors_hz=floors, weights=w)
            rho_b = _objective(scenario, tasks, a_new, f_new, traj, w)
            if rho_b > rho_a:
                f_new, rho_b = f_chain, rho_a
        else:
            f_new, rho_b = f_chain, rho_a
        entry["rho_after_allocation"] = rho_b

        # -- flight block --
        if q_mode == "sca":
            traj_new, sca_info = tj.sca_optimize(
                scenario, tasks, a_new, f_new, traj, weights=w,
                max_iters=sca_max_iters, subproblem=subproblem)
            rho_c = _objective(scenario, tasks, a_new, f_new, traj_new, w)
            if rho_c > rho_b:
                traj_new, rho_c = traj, rho_b
            if sca_info.stalled:
                diagnostics["sca_stalls"] += 1
            entry["sca_iterations"] = sca_info.iterations
        else:
            traj_new, rho_c = traj, rho_b
        entry["rho_after_trajectory"] = rho_c

        chain = [("offload", rho_start, rho_a), ("allocation", rho_a, rho_b),
                 ("trajectory", rho_b, rho_c)]
        for name, before, after in chain:
            if after > before + 1e-9 * max(1.0, abs(before)):
                diagnostics["descent_violations"].append(
                    (it, name, before, after))
        history.append(entry)
        iterations = it + 1

        a_cur, f_cur, traj, rho = a_new, f_new, traj_new, rho_c
        if rho < best[0]:
            best = (rho, a_cur, f_cur, traj)
        if abs(rho_start - rho) <= epsilon * max(abs(rho_start), 1e-12):
            converged = True
            break

    _, a_best, f_best, q_best = best
    metrics = cm.evaluate(scenario, tasks, a_best, f_best, q_best,
                          weights=w, check="strict")
    return Solution(offload=a_best, alloc=f_best, traj=q_best,
                    metrics=metrics, history=history, iterations=iterations,
                    converged=converged, diagnostics=diagnostics)


def optimize(scenario: Scenario, tasks: TaskSchedule, init="circular",
             epsilon=None, max_outer=None, *, weights=None,
             sca_max_iters=None) -> Solution:
    """Joint alternation over all three blocks from an all-local start."""
    w = weights if weights is not None else scenario.weights
    return _alternate(scenario, tasks, w, a_mode="solve", f_mode="solve",
                      q_mode="sca", traj_kind=init, epsilon=epsilon,
                      max_outer=max_outer, sca_max_iters=sca_max_iters)


# ---------------------------------------------------------------------------
# fixed offload rules for the baselines

def _rule_coefficients(scenario, tasks, w):
    """Cell costs at the even-split pricing and the initial circular plan,
    shared by every fixed-offload rule."""
    u_count, m_count, n_count = (scenario.n_users, scenario.n_uavs,
                                 scenario.time.n_slots)
    quota = scenario.solver.max_users_per_uav
    price = np.zeros((m_count, u_count, n_count))
    for mi, uav in enumerate(scenario.uavs):
        price[mi] = uav.cpu_max_hz / quota
    traj0 = tj.initial_trajectory(scenario, "circular")
    return ol.offload_cost_coefficients(scenario, tasks, price, traj0, w)


def random_offload(scenario, tasks, seed, weights=None) -> OffloadMatrix:
    """Each task picks uniformly among staying local and every UAV that is
    usable (deadline-feasible link, quota slot still open)."""
    w = weights if weights is not None else scenario.weights
    coeffs = _rule_coefficients(scenario, tasks, w)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(3,)))
    m_count, u_count, n_count = coeffs.shape
    quota = scenario.solver.max_users_per_uav
    a = np.zeros((u_count, m_count, n_count), dtype=np.int8)
    for n in range(n_count):
        open_slots = {m: quota for m in range(m_count)}
        for u in rng.permutation(u_count):
            usable = [m for m in range(m_count)
                      if open_slots[m] > 0
                      and np.isfinite(coeffs.c_offload[m, u, n])]
            pick = rng.integers(0, len(usable) + 1)
            if pick < len(usable):
                m = usable[pick]
                a[u, m, n] = 1
                open_slots[m] -= 1
    return OffloadMatrix(a)


def nearest_offload(scenario, tasks, weights=None) -> OffloadMatrix:
    """Offload to the closest usable UAV; closer users claim quota first."""
    w = weights if weights is not None else scenario.weights
    coeffs = _rule_coefficients(scenario, tasks, w)
    traj0 = tj.initial_trajectory(scenario, "circular")
    users = scenario.user_positions()
    diff = traj0.q[None, :, :, :] - users[:, None, None, :]
    dist = np.sqrt((diff ** 2).sum(axis=3))       # (U, M, N)
    m_count, u_count, n_count = coeffs.shape
    quota = scenario.solver.max_users_per_uav
    a = np.zeros((u_count, m_count, n_count), dtype=np.int8)
    for n in range(n_count):
        open_slots = {m: quota for m in range(m_count)}
        order = np.argsort(dist[:, :, n].min(axis=1), kind="stable")
        for u in order:
            for m in np.argsort(dist[u, :, n], kind="stable"):
                if open_slots[m] > 0 and np.isfinite(coeffs.c_offload[m, u, n]):
                    a[u, m, n] = 1
                    open_slots[m] -= 1
                    break
    return OffloadMatrix(a)


def matched_offload(scenario, tasks, weights=None) -> OffloadMatrix:
    """User-proposing deferred acceptance per slot.

    Users rank usable UAVs by offload cost ascending and only propose
    where offloading beats local; UAVs keep their cheapest proposals up
    to quota (ties to the lower user index).
    """
    w = weights if weights is not None else scenario.weights
    coeffs = _rule_coefficients(scenario, tasks, w)
    m_count, u_count, n_count = coeffs.shape
    quota = scenario.solver.max_users_per_uav
    a = np.zeros((u_count, m_count, n_count), dtype=np.int8)
    for n in range(n_count):
        prefs = {}
        for u in range(u_count):
            cand = [m for m in range(m_count)
                    if np.isfinite(coeffs.c_offload[m, u, n])
                    and coeffs.c_offload[m, u, n] < coeffs.c_local[u, n]]
            cand.sort(key=lambda m: (coeffs.c_offload[m, u, n], m))
            prefs[u] = cand
        held = {m: [] for m in range(m_count)}
        free = [u for u in range(u_count) if prefs[u]]
        pointer = {u: 0 for u in range(u_count)}
        while free:
            u = free.pop(0)
            if pointer[u] >= len(prefs[u]):
                continue
            m = prefs[u][pointer[u]]
            pointer[u] += 1
            held[m].append(u)
            held[m].sort(key=lambda uu: (coeffs.c_offload[m, uu, n], uu))
            if len(held[m]) > quota:
                bumped = held[m].pop()
                if pointer[bumped] < len(prefs[bumped]):
                    free.append(bumped)
        for m, kept in held.items():
            for u in kept:
                a[u, m, n] = 1
    return OffloadMatrix(a)


def run_policy(policy_id: str, scenario: Scenario, tasks: TaskSchedule,
               seed=0, *, weights=None, epsilon=None, max_outer=None,
               sca_max_iters=None) -> Solution:
    """Run one named policy; see POLICIES for the ids."""
    w = weights if weights is not None else scenario.weights
    if w.normalizers is None:
        w = w.with_normalizers(cm.normalizers(scenario, tasks))
    common = dict(epsilon=epsilon, max_outer=max_outer,
                  sca_max_iters=sca_max_iters)
    if policy_id == "joint":
        return _alternate(scenario, tasks, w, **common)
    if policy_id == "random_offload":
        return _alternate(scenario, tasks, w, a_mode="fixed",
                          a_fixed=random_offload(scenario, tasks, seed, w),
                          **common)
    if policy_id == "nearest_offload":
        return _alternate(scenario, tasks, w, a_mode="fixed",
                          a_fixed=nearest_offload(scenario, tasks, w),
                          **common)
    if policy_id == "matched_offload":
        return _alternate(scenario, tasks, w, a_mode="fixed",
                          a_fixed=matched_offload(scenario, tasks, w),
                          **common)
    if policy_id == "even_cpu":
        return _alternate(scenario, tasks, w, f_mode="even", **common)
    if policy_id == "fixed_circular":
        return _alternate(scenario, tasks, w, q_mode="fixed",
                          traj_kind="circular", **common)
    if policy_id == "fixed_racetrack":
        return _alternate(scenario, tasks, w, q_mode="fixed",
                          traj_kind="predefined", **common)
    raise ValueError(f"unknown policy {policy_id!r}")


# ---------------------------------------------------------------------------
# side-by-side comparison

@dataclass
class ComparisonTable:
    rows: list

    CSV_FIELDS = ("policy", "seed", "objective", "delay_s", "energy_j",
                  "offloaded_bits", "iterations", "wallclock_ms")

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_FIELDS)]
        for r in self.rows:
            lines.append(",".join(str(r[k]) for k in self.CSV_FIELDS))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        """Per-policy mean objective plus the joint policy's win rate
        against each baseline on matching seeds."""
        by_policy = {}
        for r in self.rows:
            by_policy.setdefault(r["policy"], []).append(r)
        means = {p: sum(r["objective"] for r in rs) / len(rs)
                 for p, rs in by_policy.items()}
        wins = total = 0
        joint = {r["seed"]: r["objective"]
                 for r in by_policy.get("joint", [])}
        for p, rs in by_policy.items():
            if p == "joint":
                continue
            for r in rs:
                if r["seed"] in joint:
                    total += 1
                    if joint[r["seed"]] <= r["objective"] + 1e-12:
                        wins += 1
        return {"mean_objective": means,
                "joint_win_rate": (wins / total) if total else None}


def compare(scenario: Scenario, tasks=None, policies=None, seeds=(0,),
            *, weights=None, epsilon=None, max_outer=None,
            sca_max_iters=None) -> ComparisonTable:
    """Run each policy on each seed.  When `tasks` is None, every seed
    draws its own task realization, which is the statistically meaningful
    mode; a fixed schedule isolates pure policy randomness instead."""
    policies = list(policies) if policies else list(POLICIES)
    rows = []
    for seed in seeds:
        sched = tasks if tasks is not None else generate_tasks(scenario, seed)
        for policy in policies:
            t0 = time.perf_counter()
            sol = run_policy(policy, scenario, sched, seed, weights=weights,
                             epsilon=epsilon, max_outer=max_outer,
                             sca_max_iters=sca_max_iters)
            ms = (time.perf_counter() - t0) * 1e3
            rows.append({
                "policy": policy,
                "seed": int(seed),
                "objective": float(sol.metrics.objective),
                "delay_s": float(sol.metrics.total_delay_s),
                "energy_j": float(sol.metrics.total_uav_energy_j),
                "offloaded_bits": float(sol.metrics.total_offloaded_bits),
                "iterations": int(sol.iterations),
                "wallclock_ms": ms,
            })
    return ComparisonTable(rows=rows)
