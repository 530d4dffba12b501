"""Delay, energy, and objective bookkeeping for a candidate solution.

A solution is three blocks: a binary offload matrix A (user u sends slot-n
task to UAV m), a CPU allocation F (Hz granted by UAV m to user u in slot
n), and a trajectory plan Q.  `evaluate` turns the triple into a
MetricsRecord and, depending on mode, either raises on constraint
violations or collects them into an audit report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import channel as ch
from .scenario import Normalizers, Scenario, TaskSchedule, TaskSpec, UserSpec, UavSpec


class ConstraintViolationError(Exception):
    """A hard constraint failed in strict evaluation."""

    def __init__(self, constraint, indices, amount):
        self.constraint = constraint
        self.indices = tuple(indices)
        self.amount = float(amount)
        super().__init__(f"{constraint} at {self.indices}: excess {amount:.3e}")


@dataclass
class Violation:
    constraint: str
    indices: tuple
    amount: float


@dataclass
class AuditReport:
    """Hard violations plus the soft local-deadline misses, kept separate
    because the all-local fallback makes local deadlines advisory."""

    violations: list = field(default_factory=list)
    local_deadline_misses: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def worst(self) -> float:
        return max((v.amount for v in self.violations), default=0.0)


class _Checker:
    def __init__(self, mode, report):
        self.mode = mode
        self.report = report

    def fail(self, constraint, indices, amount):
        if self.mode == "strict":
            raise ConstraintViolationError(constraint, indices, amount)
        if self.report is not None:
            self.report.violations.append(
                Violation(constraint, tuple(indices), float(amount)))


# ---------------------------------------------------------------------------
# decision blocks

class OffloadMatrix:
    """Binary offload decisions, shape (U, M, N), int8, read-only."""

    def __init__(self, a):
        a = np.ascontiguousarray(a)
        if a.ndim != 3:
            raise ValueError("offload matrix must be (n_users, n_uavs, n_slots)")
        if not np.isin(a, (0, 1)).all():
            raise ValueError("offload entries must be 0 or 1")
        self.a = a.astype(np.int8)
        self.a.flags.writeable = False

    @classmethod
    def all_local(cls, n_users, n_uavs, n_slots):
        return cls(np.zeros((n_users, n_uavs, n_slots), dtype=np.int8))

    @property
    def shape(self):
        return self.a.shape

    def coverage(self) -> np.ndarray:
        """Per (u, n): how many UAVs serve the task (must be 0 or 1)."""
        return self.a.sum(axis=1)

    def load(self) -> np.ndarray:
        """Per (m, n): how many users the UAV serves."""
        return self.a.sum(axis=0)

    def assigned_uav(self, u, n) -> int:
        """Index of the serving UAV, or -1 when the task runs locally."""
        for m in range(self.a.shape[1]):
            if self.a[u, m, n]:
                return m
        return -1


class AllocationMatrix:
    """CPU shares in Hz, shape (M, U, N), read-only."""

    def __init__(self, f):
        f = np.ascontiguousarray(f, dtype=float)
        if f.ndim != 3:
            raise ValueError("allocation matrix must be (n_uavs, n_users, n_slots)")
        self.f = f
        self.f.flags.writeable = False

    @classmethod
    def zeros(cls, n_uavs, n_users, n_slots):
        return cls(np.zeros((n_uavs, n_users, n_slots)))

    @property
    def shape(self):
        return self.f.shape


class TrajectoryPlan:
    """Positions, velocities, accelerations: each (M, N, 2), read-only.

    Discretization: trapezoidal positions q[n+1] = q[n] + dt/2 (v[n]+v[n+1])
    with acc[n] = (v[n+1]-v[n])/dt, which is the same recursion as
    q[n+1] = q[n] + dt v[n] + dt^2/2 acc[n].  The last acceleration column
    is zero by convention.  Loops close: q[:, -1] == q[:, 0].
    """

    def __init__(self, q, v, acc):
        self.q = np.ascontiguousarray(q, dtype=float)
        self.v = np.ascontiguousarray(v, dtype=float)
        self.acc = np.ascontiguousarray(acc, dtype=float)
        if not (self.q.shape == self.v.shape == self.acc.shape) \
                or self.q.ndim != 3 or self.q.shape[2] != 2:
            raise ValueError("q, v, acc must share shape (n_uavs, n_slots, 2)")
        for a in (self.q, self.v, self.acc):
            a.flags.writeable = False

    @classmethod
    def from_velocity(cls, start_m, v, slot_s, close_loop=True):
        """Rebuild positions from velocities by the trapezoid rule.

        With close_loop, the mean velocity is removed first so the path
        returns exactly to its start; the whole closure residual is spread
        as one constant velocity shift.
        """
        v = np.array(v, dtype=float)
        m, n, _ = v.shape
        if close_loop:
            # closure residual of the trapezoid sum, per UAV
            w = np.ones(n)
            w[0] = w[-1] = 0.5
            drift = (v * w[None, :, None]).sum(axis=1) * slot_s
            v = v - drift[:, None, :] / ((n - 1) * slot_s)
        q = np.empty_like(v)
        q[:, 0] = np.asarray(start_m, dtype=float)
        steps = 0.5 * slot_s * (v[:, :-1] + v[:, 1:])
        q[:, 1:] = q[:, 0][:, None, :] + np.cumsum(steps, axis=1)
        acc = np.zeros_like(v)
        acc[:, :-1] = (v[:, 1:] - v[:, :-1]) / slot_s
        return cls(q, v, acc)

    @property
    def n_uavs(self):
        return self.q.shape[0]

    @property
    def n_slots(self):
        return self.q.shape[1]

    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.v, axis=2)

    def audit(self, scenario: Scenario, dyn_tol=1e-9) -> AuditReport:
        report = AuditReport()
        _check_trajectory(self, scenario, _Checker("audit", report), dyn_tol)
        return report

    def validate(self, scenario: Scenario, dyn_tol=1e-9):
        _check_trajectory(self, scenario, _Checker("strict", None), dyn_tol)
        return self


def _check_trajectory(traj, scenario, chk, dyn_tol):
    dt = scenario.time.slot_s
    q, v, acc = traj.q, traj.v, traj.acc
    m_count, n = q.shape[0], q.shape[1]
    if n != scenario.time.n_slots or m_count != scenario.n_uavs:
        chk.fail("trajectory.shape", (m_count, n), 0.0)
        return

    res_q = q[:, 1:] - q[:, :-1] - dt * v[:, :-1] - 0.5 * dt * dt * acc[:, :-1]
    worst = float(np.abs(res_q).max()) if res_q.size else 0.0
    if worst > dyn_tol:
        idx = np.unravel_index(np.abs(res_q).argmax(), res_q.shape)
        chk.fail("trajectory.dynamics", idx[:2], worst)

    res_v = v[:, 1:] - v[:, :-1] - dt * acc[:, :-1]
    worst = float(np.abs(res_v).max()) if res_v.size else 0.0
    if worst > dyn_tol:
        idx = np.unravel_index(np.abs(res_v).argmax(), res_v.shape)
        chk.fail("trajectory.velocity_recursion", idx[:2], worst)

    closure = np.linalg.norm(q[:, -1] - q[:, 0], axis=1)
    if closure.max() > 1e-6:
        chk.fail("trajectory.closure", (int(closure.argmax()),), closure.max())

    speeds = traj.speeds()
    for mi in range(m_count):
        spec = scenario.uavs[mi]
        over = speeds[mi] - spec.v_max_mps
        if over.max() > 0:
            chk.fail("trajectory.v_max", (mi, int(over.argmax())), over.max())
        under = spec.v_min_mps - speeds[mi]
        if under.max() > 0:
            chk.fail("trajectory.v_min", (mi, int(under.argmax())), under.max())
        amag = np.linalg.norm(acc[mi, :-1], axis=1)
        aover = amag - spec.a_max_mps2
        if amag.size and aover.max() > 0:
            chk.fail("trajectory.a_max", (mi, int(aover.argmax())), aover.max())
        step = np.linalg.norm(q[mi, 1:] - q[mi, :-1], axis=1)
        sover = step - spec.v_max_mps * dt - 1e-9
        if step.size and sover.max() > 0:
            chk.fail("trajectory.step_length", (mi, int(sover.argmax())), sover.max())

    for mi in range(m_count):
        for mj in range(mi + 1, m_count):
            d_min = max(scenario.uavs[mi].min_separation_m,
                        scenario.uavs[mj].min_separation_m)
            dist = np.linalg.norm(q[mi] - q[mj], axis=1)
            gap = d_min - dist
            if gap.max() > 0:
                chk.fail("trajectory.separation", (mi, mj, int(gap.argmax())),
                         gap.max())


# ---------------------------------------------------------------------------
# per-task scalar costs

def local_delay(task: TaskSpec, user: UserSpec) -> float:
    """Seconds to finish the task on the user's own CPU."""
    return task.cycles / user.cpu_hz


def local_energy(task: TaskSpec, user: UserSpec) -> float:
    """Joules burned by the user CPU (switched-capacitance model)."""
    return user.switch_cap_coeff * user.cpu_hz ** 2 * task.cycles


def offload_delay(task: TaskSpec, rate_bps: float, alloc_hz: float) -> float:
    """Upload plus remote-compute seconds; +inf when the link or the CPU
    share cannot carry the task at all."""
    if task.size_bits <= 0:
        return 0.0
    if rate_bps <= 0 or alloc_hz <= 0:
        return math.inf
    return task.size_bits / rate_bps + task.cycles / alloc_hz


def uav_compute_energy(task: TaskSpec, alloc_hz: float, uav: UavSpec) -> float:
    """Joules burned by the UAV CPU running the task at alloc_hz."""
    return uav.switch_cap_coeff * alloc_hz ** 2 * task.cycles


def induced_power_factor(sq_speed, propulsion) -> np.ndarray:
    """Dimensionless induced-power multiplier as a function of speed^2.

    Solves the momentum-theory quartic; equals 1 at hover and decays
    roughly like v0/v at speed.
    """
    sp = np.asarray(sq_speed, dtype=float)
    v0sq = propulsion.hover_induced_mps ** 2
    return np.sqrt(np.sqrt(1.0 + sp * sp / (4.0 * v0sq * v0sq))
                   - sp / (2.0 * v0sq))


def propulsion_power(speed_mps, propulsion) -> np.ndarray:
    """Rotary-wing power draw in watts at the given airspeed(s)."""
    v = np.asarray(speed_mps, dtype=float)
    if (v < 0).any():
        raise ValueError("speed must be >= 0")
    sp = v * v
    blade = propulsion.blade_profile_w * (1.0 + 3.0 * sp
                                          / propulsion.tip_speed_mps ** 2)
    induced = propulsion.induced_w * induced_power_factor(sp, propulsion)
    parasite = (0.5 * propulsion.fuselage_drag_ratio * propulsion.air_density
                * propulsion.rotor_solidity * propulsion.disc_area_m2
                * v ** 3)
    out = blade + induced + parasite
    return float(out) if np.isscalar(speed_mps) else out


def hover_power(propulsion) -> float:
    return float(propulsion_power(0.0, propulsion))


def normalizers(scenario: Scenario, tasks: TaskSchedule) -> Normalizers:
    """Reference scales: all-local delay, hovering fleet energy, total bits."""
    t_local = 0.0
    for n in range(tasks.n_slots):
        for u in range(tasks.n_users):
            t_local += local_delay(tasks.task(u, n), scenario.users[u])
    e_hover = sum(hover_power(m.propulsion) for m in scenario.uavs) \
        * scenario.time.slot_s * scenario.time.n_slots
    return Normalizers(delay_s=t_local, energy_j=e_hover,
                       bits=tasks.total_bits)


# ---------------------------------------------------------------------------
# full evaluation

@dataclass
class MetricsRecord:
    objective: float
    total_delay_s: float
    total_uav_energy_j: float
    total_offloaded_bits: float
    flight_energy_j: float
    compute_energy_j: float
    delay_term: float
    energy_term: float
    offload_term: float
    delay_s_per_slot: np.ndarray
    uav_energy_j_per_slot: np.ndarray
    offloaded_bits_per_slot: np.ndarray
    weights: object
    audit: Optional[AuditReport] = None

    CSV_FIELDS = ("objective", "total_delay_s", "total_uav_energy_j",
                  "total_offloaded_bits", "flight_energy_j",
                  "compute_energy_j", "delay_term", "energy_term",
                  "offload_term")

    def to_csv_row(self) -> str:
        return ",".join(repr(float(getattr(self, k))) for k in self.CSV_FIELDS)

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_FIELDS)

    def to_json(self) -> str:
        d = {k: float(getattr(self, k)) for k in self.CSV_FIELDS}
        d["delay_s_per_slot"] = [float(x) for x in self.delay_s_per_slot]
        d["uav_energy_j_per_slot"] = [float(x) for x in self.uav_energy_j_per_slot]
        d["offloaded_bits_per_slot"] = [float(x) for x in
                                        self.offloaded_bits_per_slot]
        return json.dumps(d, sort_keys=True, separators=(",", ":"))


def link_rates(scenario: Scenario, traj: TrajectoryPlan) -> np.ndarray:
    """Expected-gain uplink rate for every (u, m, n) triple, bits/s."""
    users = scenario.user_positions()          # (U, 2)
    diff = traj.q[None, :, :, :] - users[:, None, None, :]
    s = (diff ** 2).sum(axis=3)                # (U, M, N)
    rates = np.empty_like(s)
    for ui, user in enumerate(scenario.users):
        for mi, uav in enumerate(scenario.uavs):
            rates[ui, mi, :] = ch.rate_from_sq_dist(
                s[ui, mi, :], uav.altitude_m, user.tx_power_w,
                scenario.channel)
    return rates


def evaluate(scenario: Scenario, tasks: TaskSchedule, offload: OffloadMatrix,
             alloc: AllocationMatrix, traj: TrajectoryPlan, *,
             weights=None, check="strict") -> MetricsRecord:
    """Score a candidate solution.

    check='strict' raises ConstraintViolationError at the first hard
    violation; 'audit' records them all and still returns metrics; 'off'
    skips the checks.  The per-term accumulation runs slot-major, then
    user, then UAV; the order is part of the contract so an independent
    recomputation can match bit for bit.
    """
    w = weights if weights is not None else scenario.weights
    if w.normalizers is None:
        w = w.with_normalizers(normalizers(scenario, tasks))
    norm = w.normalizers

    u_count, m_count, n_count = offload.shape
    if (u_count, n_count) != (tasks.n_users, tasks.n_slots) \
            or m_count != scenario.n_uavs:
        raise ValueError("offload matrix shape does not match scenario")
    if alloc.shape != (m_count, u_count, n_count):
        raise ValueError("allocation matrix shape does not match scenario")

    report = AuditReport() if check != "off" else None
    chk = _Checker(check, report)
    if check != "off":
        _check_offload(offload, tasks, scenario, chk)
        _check_allocation(alloc, offload, scenario, chk)
        _check_trajectory(traj, scenario, chk, 1e-9)

    rates = link_rates(scenario, traj)
    dt = scenario.time.slot_s
    speeds = traj.speeds()
    fly_power = np.empty_like(speeds)
    for mi, uav in enumerate(scenario.uavs):
        fly_power[mi] = propulsion_power(speeds[mi], uav.propulsion)

    a = offload.a
    f = alloc.f
    delay_slot = np.zeros(n_count)
    energy_slot = np.zeros(n_count)
    bits_slot = np.zeros(n_count)
    flight_total = 0.0
    compute_total = 0.0

    for n in range(n_count):
        d_acc = 0.0
        e_acc = 0.0
        k_acc = 0.0
        for mi in range(m_count):
            e_acc += dt * fly_power[mi, n]
        flight_here = e_acc
        for u in range(u_count):
            task = tasks.task(u, n)
            served = -1
            for mi in range(m_count):
                if a[u, mi, n]:
                    served = mi
                    break
            if served < 0:
                t_here = local_delay(task, scenario.users[u])
                if check != "off" and task.size_bits > 0 \
                        and t_here > task.deadline_s and report is not None:
                    report.local_deadline_misses.append(
                        (u, n, t_here - task.deadline_s))
                d_acc += t_here
            else:
                t_here = offload_delay(task, rates[u, served, n],
                                       f[served, u, n])
                if check != "off" and t_here > task.deadline_s + 1e-9:
                    chk.fail("offload.deadline", (u, served, n),
                             t_here - task.deadline_s)
                d_acc += t_here
                e_comp = uav_compute_energy(task, f[served, u, n],
                                            scenario.uavs[served])
                e_acc += e_comp
                compute_total += e_comp
                k_acc += task.size_bits
        delay_slot[n] = d_acc
        energy_slot[n] = e_acc
        bits_slot[n] = k_acc
        flight_total += flight_here

    total_delay = float(delay_slot.sum())
    total_energy = float(energy_slot.sum())
    total_bits = float(bits_slot.sum())
    delay_term = w.w_delay * total_delay / norm.delay_s
    energy_term = w.w_energy * total_energy / norm.energy_j
    offload_term = w.w_offload * total_bits / norm.bits
    objective = delay_term + energy_term - offload_term

    return MetricsRecord(
        objective=objective,
        total_delay_s=total_delay,
        total_uav_energy_j=total_energy,
        total_offloaded_bits=total_bits,
        flight_energy_j=flight_total,
        compute_energy_j=compute_total,
        delay_term=delay_term,
        energy_term=energy_term,
        offload_term=offload_term,
        delay_s_per_slot=delay_slot,
        uav_energy_j_per_slot=energy_slot,
        offloaded_bits_per_slot=bits_slot,
        weights=w,
        audit=report,
    )


def _check_offload(offload, tasks, scenario, chk):
    a = offload.a
    quota = scenario.solver.max_users_per_uav
    cover = offload.coverage()
    if cover.max(initial=0) > 1:
        idx = np.unravel_index(cover.argmax(), cover.shape)
        chk.fail("offload.single_server", idx, cover.max() - 1)
    load = offload.load()
    if load.max(initial=0) > quota:
        idx = np.unravel_index(load.argmax(), load.shape)
        chk.fail("offload.uav_quota", idx, load.max() - quota)
    ghost = (a.sum(axis=1) > 0) & (tasks.size_bits <= 0)
    if ghost.any():
        idx = np.unravel_index(ghost.argmax(), ghost.shape)
        chk.fail("offload.task_exists", idx, 1.0)


def _check_allocation(alloc, offload, scenario, chk):
    f = alloc.f
    if f.min(initial=0.0) < 0:
        idx = np.unravel_index(f.argmin(), f.shape)
        chk.fail("allocation.nonnegative", idx, -f.min())
    a_t = np.transpose(offload.a, (1, 0, 2))
    orphan = (f > 0) & (a_t == 0)
    if orphan.any():
        idx = np.unravel_index(orphan.argmax(), orphan.shape)
        chk.fail("allocation.positive_only_where_assigned", idx, f[idx])
    starved = (f <= 0) & (a_t == 1)
    if starved.any():
        idx = np.unravel_index(starved.argmax(), starved.shape)
        chk.fail("allocation.positive_where_assigned", idx, 0.0)
    for mi, uav in enumerate(scenario.uavs):
        cap = uav.cpu_max_hz
        tol = 1e-9 * cap
        if f[mi].max(initial=0.0) > cap + tol:
            idx = np.unravel_index(f[mi].argmax(), f[mi].shape)
            chk.fail("allocation.per_user_cap", (mi,) + idx,
                     f[mi].max() - cap)
        total = f[mi].sum(axis=0)
        if total.max(initial=0.0) > cap + tol:
            n = int(total.argmax())
            chk.fail("allocation.capacity", (mi, n), total.max() - cap)
