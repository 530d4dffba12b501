"""Trajectory refinement by successive convex approximation.

With offloads and CPU shares fixed, the flight problem couples upload
delay (through link distance), propulsion energy (through speed), and the
kinematic envelope.  Each iteration solves a conic subproblem built from
first-order models around the current flight plan:

  * upload rate is replaced by its tangent in the squared link distance
    (an underestimate when the rate is convex in that variable, which
    holds for this channel family; see the channel tests),
  * the induced-power coupling and the minimum-speed rule linearize the
    squared speed from below,
  * pairwise separation linearizes the squared distance from below.

All replacements restrict the feasible set and overestimate the true
cost, so any subproblem improvement that survives the exact re-check is a
true improvement.  The subproblem itself is fully nondimensionalized
(positions in km, velocities in units of v_max, rates in units of 1e8
bit/s) because the raw metre/hertz scales defeat interior-point
equilibration and produce false infeasibility certificates.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy.optimize import brentq

from . import cost_model as cm
from .cost_model import AllocationMatrix, OffloadMatrix, TrajectoryPlan
from . import channel as ch
from .scenario import Scenario, TaskSchedule

# scales: positions km, squared link distances km^2, rates 1e8 bit/s
_QS = 1e3
_DS = _QS * _QS
_RS = 1e8
# constraint margin so solver-tolerance residuals never become true
# violations of the original envelope
_MARG = 1e-6
# induced-power cone is normalized by this to sit near unity
_LSCALE = 40.0
_PROX_Q = 1e-4
_PROX_V = 1e-5
_NUDGE = 1e-7


def speed_surrogate(v, v_ref):
    """Tangent lower bound on ||v||^2 around v_ref (exact at v_ref)."""
    v = np.asarray(v, dtype=float)
    v_ref = np.asarray(v_ref, dtype=float)
    return (2.0 * (v_ref * v).sum(axis=-1)
            - (v_ref * v_ref).sum(axis=-1))


def separation_surrogate(q_m, q_i, q_m_ref, q_i_ref):
    """Tangent lower bound on ||q_m - q_i||^2 around the reference pair.

    Raises when the reference points coincide; the caller must perturb
    first, a zero gradient pins the pair together forever.
    """
    d_ref = np.asarray(q_m_ref, float) - np.asarray(q_i_ref, float)
    ref_sq = (d_ref * d_ref).sum(axis=-1)
    if np.any(ref_sq <= 0.0):
        raise ValueError("coincident reference points have no separating tangent")
    d = np.asarray(q_m, float) - np.asarray(q_i, float)
    return 2.0 * (d_ref * d).sum(axis=-1) - ref_sq


def induced_speed_surrogate(v, v_ref, propulsion):
    """Induced-power factor after linearizing the squared speed at v_ref.

    Smallest y satisfying 1/y^2 <= 2 y_r y - y_r^2 + l(v)/v0^2 with l the
    tangent bound on speed^2.  Always >= the true factor, equal at v_ref.
    """
    sp_ref = float((np.asarray(v_ref, float) ** 2).sum())
    y_ref = float(cm.induced_power_factor(sp_ref, propulsion))
    lin = float(speed_surrogate(np.asarray(v, float), np.asarray(v_ref, float)))
    v0sq = propulsion.hover_induced_mps ** 2
    a = 2.0 * y_ref
    b = lin / v0sq - y_ref * y_ref

    def g(y):
        return a * y + b - 1.0 / (y * y)

    hi = max(2.0 * y_ref, 1.0)
    while g(hi) < 0.0:
        hi *= 2.0
        if hi > 1e9:
            raise ArithmeticError("induced-speed surrogate root escaped")
    return brentq(g, 1e-12, hi, xtol=1e-15, rtol=1e-14, maxiter=200)


# ---------------------------------------------------------------------------
# initial flight plans

def initial_trajectory(scenario: Scenario, kind="circular", *, speed=None,
                       radius=None, custom=None) -> TrajectoryPlan:
    """Feasible starting loops.

    'circular': one loop per UAV around its start position, all UAVs in
    phase so their mutual distance stays at the (validated) center
    distance.  'predefined': a racetrack of two straights and two turn
    caps, again congruent and in phase across the fleet.  'custom': a
    caller-supplied plan, validated.
    """
    if kind == "custom":
        if not isinstance(custom, TrajectoryPlan):
            raise ValueError("custom kind needs a TrajectoryPlan")
        return custom.validate(scenario)
    if kind == "circular":
        return _circular(scenario, speed, radius).validate(scenario)
    if kind == "predefined":
        return _racetrack(scenario, speed).validate(scenario)
    raise ValueError(f"unknown trajectory kind {kind!r}")


def _default_speed(scenario):
    v_lo = max(m.v_min_mps for m in scenario.uavs)
    v_hi = min(m.v_max_mps for m in scenario.uavs)
    return min(1.5 * v_lo if v_lo > 0 else 0.5 * v_hi, 0.9 * v_hi)


def _circular(scenario, speed, radius):
    n = scenario.time.n_slots
    dt = scenario.time.slot_s
    v_nom = speed if speed is not None else _default_speed(scenario)
    r = radius if radius is not None else \
        v_nom * scenario.time.horizon_s / (2.0 * math.pi)
    # chord-consistent tangent speed for the trapezoid rule
    half = math.pi / (n - 1)
    v_tan = (2.0 * r / dt) * math.tan(half)
    theta = 2.0 * math.pi * np.arange(n) / (n - 1)
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    tang = np.stack([-np.sin(theta), np.cos(theta)], axis=1)
    m_count = scenario.n_uavs
    q = np.empty((m_count, n, 2))
    v = np.empty((m_count, n, 2))
    centers = scenario.uav_positions()
    for mi in range(m_count):
        q[mi] = centers[mi] + r * ring
        v[mi] = v_tan * tang
    q[:, -1] = q[:, 0]
    v[:, -1] = v[:, 0]
    acc = np.zeros_like(v)
    acc[:, :-1] = (v[:, 1:] - v[:, :-1]) / dt
    return TrajectoryPlan(q, v, acc)


def _racetrack(scenario, speed):
    n = scenario.time.n_slots
    dt = scenario.time.slot_s
    v_nom = speed if speed is not None else _default_speed(scenario)
    a_cap = min(m.a_max_mps2 for m in scenario.uavs)
    steps = n - 1
    turn = max(3, math.ceil(math.pi * v_nom / (0.9 * a_cap * dt)))
    if 2 * turn + 2 > steps:
        raise ValueError("horizon too short for a racetrack at this speed")
    straight = steps - 2 * turn
    k1 = (straight + 1) // 2
    k2 = straight - k1
    heading = np.empty(steps)
    i = 0
    heading[i:i + k1] = 0.0
    i += k1
    heading[i:i + turn] = np.pi * (np.arange(turn) + 1) / turn
    i += turn
    heading[i:i + k2] = np.pi
    i += k2
    heading[i:i + turn] = np.pi + np.pi * (np.arange(turn) + 1) / turn
    v_one = np.empty((n, 2))
    v_one[:-1, 0] = v_nom * np.cos(heading)
    v_one[:-1, 1] = v_nom * np.sin(heading)
    v_one[-1] = v_one[0]
    m_count = scenario.n_uavs
    v = np.broadcast_to(v_one, (m_count, n, 2)).copy()
    starts = scenario.uav_positions()
    return TrajectoryPlan.from_velocity(starts, v, dt, close_loop=True)


# ---------------------------------------------------------------------------
# first-order link data shared by the subproblem and the surrogate value

@dataclass
class LinkTable:
    """Per (k, m, n) active-link data, flattened row-major with the k
    blocks outermost; inert rows carry neutral coefficients."""

    user_idx: np.ndarray      # (K*M*N,) int, -1 when inert
    w_m: np.ndarray           # (K*M*N, 2) user position, 0 when inert
    size_bits: np.ndarray     # (K*M*N,)
    s_ref: np.ndarray         # (K*M*N,) squared horiz distance at trust
    rate_ref: np.ndarray      # (K*M*N,) bit/s at trust
    slope: np.ndarray         # (K*M*N,) -dR/ds >= 0
    rate_min: np.ndarray      # (K*M*N,) deadline floor on the rate, 0 inert
    active: np.ndarray        # (K*M*N,) bool


def build_link_table(scenario: Scenario, tasks: TaskSchedule,
                     offload: OffloadMatrix, alloc: AllocationMatrix,
                     traj_ref: TrajectoryPlan, k_rows: int) -> LinkTable:
    m_count, n_count = traj_ref.q.shape[0], traj_ref.q.shape[1]
    rows = k_rows * m_count * n_count
    user_idx = np.full(rows, -1, dtype=int)
    w_m = np.zeros((rows, 2))
    size_bits = np.zeros(rows)
    s_ref = np.ones(rows)
    rate_ref = np.ones(rows)
    slope = np.zeros(rows)
    rate_min = np.zeros(rows)
    users = scenario.user_positions()
    for mi in range(m_count):
        for n in range(n_count):
            served = np.flatnonzero(offload.a[:, mi, n])
            if served.size > k_rows:
                raise ValueError("offload plan exceeds the compiled quota")
            for k, u in enumerate(served):
                r = k * m_count * n_count + mi * n_count + n
                user_idx[r] = u
                w_m[r] = users[u]
                d = tasks.size_bits[u, n]
                size_bits[r] = d
                diff = traj_ref.q[mi, n] - users[u]
                s = float(diff @ diff)
                s = max(s, 1e-6)
                s_ref[r] = s
                uav = scenario.uavs[mi]
                rate_ref[r] = float(ch.rate_from_sq_dist(
                    np.array([s]), uav.altitude_m,
                    scenario.users[u].tx_power_w, scenario.channel)[0])
                sl = -float(ch.rate_slope_sq_dist(
                    np.array([s]), uav.altitude_m,
                    scenario.users[u].tx_power_w, scenario.channel)[0])
                slope[r] = max(sl, 0.0)
                f_here = alloc.f[mi, u, n]
                slack = tasks.deadline_s[u] - tasks.cycles[u, n] / f_here
                if slack <= 0:
                    raise ValueError("allocation leaves no time for upload")
                rate_min[r] = d / slack
    return LinkTable(user_idx=user_idx, w_m=w_m, size_bits=size_bits,
                     s_ref=s_ref, rate_ref=rate_ref, slope=slope,
                     rate_min=rate_min, active=user_idx >= 0)


@dataclass
class SurrogateObjective:
    """Closed-form value of the convexified objective around a trust plan.

    value(plan) majorizes the true objective for the same offloads and
    shares, and matches it at the trust plan.
    """

    scenario: Scenario
    trust: TrajectoryPlan
    links: LinkTable
    constant: float
    w_delay_n: float
    w_energy_n: float

    def value(self, traj: TrajectoryPlan) -> float:
        s = self.scenario
        dt = s.time.slot_s
        total = self.constant
        m_count, n_count = traj.q.shape[0], traj.q.shape[1]
        for r in np.flatnonzero(self.links.active):
            mi = (r // n_count) % m_count
            n = r % n_count
            diff = traj.q[mi, n] - self.links.w_m[r]
            s_now = float(diff @ diff)
            r_hat = self.links.rate_ref[r] \
                - self.links.slope[r] * (s_now - self.links.s_ref[r])
            if r_hat <= 0.0:
                return math.inf
            total += self.w_delay_n * self.links.size_bits[r] / r_hat
        for mi in range(m_count):
            prop = s.uavs[mi].propulsion
            for n in range(n_count):
                v = traj.v[mi, n]
                vr = self.trust.v[mi, n]
                spd2 = float(v @ v)
                blade = prop.blade_profile_w * (
                    1.0 + 3.0 * spd2 / prop.tip_speed_mps ** 2)
                y = induced_speed_surrogate(v, vr, prop)
                para = (0.5 * prop.fuselage_drag_ratio * prop.air_density
                        * prop.rotor_solidity * prop.disc_area_m2
                        * spd2 ** 1.5)
                total += self.w_energy_n * dt * (
                    blade + prop.induced_w * y + para)
        return total


def convexify_objective(scenario: Scenario, tasks: TaskSchedule,
                        offload: OffloadMatrix, alloc: AllocationMatrix,
                        trust: TrajectoryPlan, weights=None,
                        k_rows=None) -> SurrogateObjective:
    """First-order majorizer of the full objective around `trust`."""
    w = weights if weights is not None else scenario.weights
    if w.normalizers is None:
        w = w.with_normalizers(cm.normalizers(scenario, tasks))
    w1 = w.w_delay / w.normalizers.delay_s
    w2 = w.w_energy / w.normalizers.energy_j
    w3 = w.w_offload / w.normalizers.bits
    if k_rows is None:
        k_rows = max(1, int(offload.load().max(initial=1)))
    links = build_link_table(scenario, tasks, offload, alloc, trust, k_rows)

    const = 0.0
    a = offload.a
    for n in range(tasks.n_slots):
        for u in range(tasks.n_users):
            task = tasks.task(u, n)
            served = offload.assigned_uav(u, n)
            if served < 0:
                const += w1 * cm.local_delay(task, scenario.users[u])
            else:
                f_here = alloc.f[served, u, n]
                const += w1 * task.cycles / f_here
                const += w2 * cm.uav_compute_energy(
                    task, f_here, scenario.uavs[served])
                const -= w3 * task.size_bits
    return SurrogateObjective(scenario=scenario, trust=trust, links=links,
                              constant=const, w_delay_n=w1, w_energy_n=w2)


# ---------------------------------------------------------------------------
# the conic subproblem, compiled once per shape and re-parameterized

class TrajectorySubproblem:
    """One parameterized conic program for a fixed (fleet, horizon, quota).

    Building the cvxpy graph dominates solve time, so the graph is kept
    and only parameter values change between iterations.  All rows are
    explicit second-order cones; the nondimensionalization (and the
    margins baked into the kinematic bounds) is what keeps the solver's
    certificates trustworthy, do not remove it.
    """

    def __init__(self, scenario: Scenario, k_rows=None, weights=None):
        self.scenario = scenario
        m_count = scenario.n_uavs
        n = scenario.time.n_slots
        self.k_rows = k_rows if k_rows is not None else \
            scenario.solver.max_users_per_uav
        dt = scenario.time.slot_s
        mn = m_count * n
        rows = self.k_rows * mn
        self.vs = max(m.v_max_mps for m in scenario.uavs)
        vs = self.vs
        pairs = [(i, j) for i in range(m_count) for j in range(i + 1, m_count)]
        self.pairs = pairs

        w = weights if weights is not None else scenario.weights
        if w.normalizers is None:
            raise ValueError("weights must carry normalizers before compiling")
        self.w_energy_n = w.w_energy / w.normalizers.energy_j

        idx = np.arange(mn).reshape(m_count, n)
        a_sel = idx[:, :-1].ravel()
        b_sel = idx[:, 1:].ravel()
        first = idx[:, 0]
        last = idx[:, -1]
        link_q = np.tile(np.arange(mn), self.k_rows)

        qh = cp.Variable((mn, 2))
        vh = cp.Variable((mn, 2))
        y = cp.Variable(mn)
        g = cp.Variable(mn)
        s_n = cp.Variable(mn)
        z3 = cp.Variable(mn)
        t3 = cp.Variable(mn)
        s2 = cp.Variable(rows)
        e = cp.Variable(rows)
        self._qh, self._vh = qh, vh

        self.p_vr = cp.Parameter((mn, 2))
        self.p_spv = cp.Parameter(mn)
        self.p_yr = cp.Parameter(mn)
        self.p_yr2 = cp.Parameter(mn)
        self.p_qrh = cp.Parameter((mn, 2))
        self.p_vrh = cp.Parameter((mn, 2))
        self.p_wh = cp.Parameter((rows, 2))
        self.p_wh2 = cp.Parameter(rows)
        self.p_al = cp.Parameter(rows, nonneg=True)
        self.p_c = cp.Parameter(rows)
        self.p_dc = cp.Parameter(rows, nonneg=True)
        self.p_dl = cp.Parameter(rows)
        self.p_nudge = cp.Parameter(rows, nonneg=True)
        n_pr = len(pairs) * n
        self.p_dqrh = cp.Parameter((max(n_pr, 1), 2))
        self.p_dqr2 = cp.Parameter(max(n_pr, 1))

        v_max_row = np.repeat([m.v_max_mps for m in scenario.uavs], n)
        v_min_row = np.repeat([m.v_min_mps for m in scenario.uavs], n)
        a_max_row = np.repeat([m.a_max_mps2 for m in scenario.uavs], n - 1)
        ones_mn = np.ones(mn)
        ones_rows = np.ones(rows)

        # linearized squared speed in (m/s)^2
        vdot = 2.0 * vs * cp.sum(cp.multiply(self.p_vr, vh), axis=1) \
            - self.p_spv

        cons = [
            qh[b_sel] - qh[a_sel]
            == (dt * vs / (2.0 * _QS)) * (vh[a_sel] + vh[b_sel]),
            qh[last] == qh[first],
            cp.norm(vh[b_sel] - vh[a_sel], axis=1)
            <= (a_max_row * dt - _MARG) / vs,
            cp.norm(vh, axis=1) <= (v_max_row - _MARG) / vs,
            vdot >= (v_min_row + _MARG) ** 2,
            s2 >= cp.sum(cp.square(qh[link_q]), axis=1)
            - 2.0 * cp.sum(cp.multiply(self.p_wh, qh[link_q]), axis=1)
            + self.p_wh2,
            cp.multiply(self.p_al, s2) <= self.p_dl,
        ]
        if pairs:
            rows_m = np.concatenate([idx[i] for i, _ in pairs])
            rows_i = np.concatenate([idx[j] for _, j in pairs])
            d_min = np.repeat(
                [max(scenario.uavs[i].min_separation_m,
                     scenario.uavs[j].min_separation_m) for i, j in pairs], n)
            cons.append(
                2.0 * cp.sum(cp.multiply(self.p_dqrh,
                                         qh[rows_m] - qh[rows_i]), axis=1)
                - self.p_dqr2 >= ((d_min + _MARG) / _QS) ** 2)

        # g y >= 1 and g^2 <= linearized induced coupling, both as SOC
        v0sq_row = np.repeat(
            [m.propulsion.hover_induced_mps ** 2 for m in scenario.uavs], n)
        lin = 2.0 * cp.multiply(self.p_yr, y) - self.p_yr2 + vdot / v0sq_row
        cons.append(cp.SOC(g + y, cp.vstack(
            [2.0 * ones_mn, g - y]), axis=0))
        cons.append(cp.SOC(lin / _LSCALE + 1.0, cp.vstack(
            [2.0 * g / math.sqrt(_LSCALE), lin / _LSCALE - 1.0]), axis=0))

        # epigraph tower for speed^3 on the normalized speed
        cons.append(cp.norm(vh, axis=1) <= s_n)
        cons.append(cp.SOC(z3 + 1.0, cp.vstack(
            [2.0 * s_n, z3 - 1.0]), axis=0))
        cons.append(cp.SOC(t3 + s_n, cp.vstack(
            [2.0 * z3, t3 - s_n]), axis=0))

        # e h >= 1 with h the scaled linearized rate
        h = self.p_c - cp.multiply(self.p_al, s2)
        cons.append(cp.SOC(e + h, cp.vstack(
            [2.0 * ones_rows, e - h]), axis=0))

        p0_row = np.repeat(
            [m.propulsion.blade_profile_w for m in scenario.uavs], n)
        ut2_row = np.repeat(
            [m.propulsion.tip_speed_mps ** 2 for m in scenario.uavs], n)
        pi_row = np.repeat(
            [m.propulsion.induced_w for m in scenario.uavs], n)
        par_row = np.repeat(
            [0.5 * m.propulsion.fuselage_drag_ratio
             * m.propulsion.air_density * m.propulsion.rotor_solidity
             * m.propulsion.disc_area_m2 for m in scenario.uavs], n)

        flight = dt * (
            cp.sum(cp.multiply(p0_row * 3.0 * vs ** 2 / ut2_row,
                               cp.sum(cp.square(vh), axis=1)))
            + cp.sum(cp.multiply(pi_row, y))
            + vs ** 3 * cp.sum(cp.multiply(par_row, t3)))
        objective = (self.w_energy_n * flight
                     + cp.sum(cp.multiply(self.p_dc, e))
                     + _NUDGE * cp.sum(cp.multiply(self.p_nudge, s2))
                     + _PROX_Q * cp.sum_squares(qh - self.p_qrh)
                     + _PROX_V * cp.sum_squares(vh - self.p_vrh))
        self.problem = cp.Problem(cp.Minimize(objective), cons)
        self._mn = mn
        self._rows = rows
        self._n = n
        self._m = m_count
        self._dt = dt
        self._w_delay_n = None  # set per solve through link scaling

    def load(self, trust: TrajectoryPlan, links: LinkTable, w_delay_n):
        """Push trust-point and link data into the parameters."""
        m_count, n = self._m, self._n
        vr = trust.v.reshape(self._mn, 2)
        spv = (vr ** 2).sum(axis=1)
        self.p_vr.value = vr
        self.p_spv.value = spv
        yr = np.empty(self._mn)
        for mi in range(m_count):
            prop = self.scenario.uavs[mi].propulsion
            sl = slice(mi * n, (mi + 1) * n)
            yr[sl] = cm.induced_power_factor(spv[sl], prop)
        self.p_yr.value = yr
        self.p_yr2.value = yr * yr
        self.p_qrh.value = trust.q.reshape(self._mn, 2) / _QS
        self.p_vrh.value = vr / self.vs
        if self.pairs:
            dq = np.concatenate([
                (trust.q[i] - trust.q[j]) / _QS for i, j in self.pairs])
            self.p_dqrh.value = dq
            self.p_dqr2.value = (dq ** 2).sum(axis=1)
        else:
            self.p_dqrh.value = np.zeros((1, 2))
            self.p_dqr2.value = np.ones(1)

        if links.user_idx.size != self._rows:
            raise ValueError("link table does not match the compiled quota")
        act = links.active
        self.p_wh.value = np.where(act[:, None], links.w_m / _QS, 0.0)
        self.p_wh2.value = np.where(
            act, (links.w_m ** 2).sum(axis=1) / _DS, 0.0)
        al = np.where(act, links.slope * _DS / _RS, 0.0)
        self.p_al.value = al
        self.p_c.value = np.where(
            act, (links.rate_ref + links.slope * links.s_ref) / _RS, 1.0)
        self.p_dc.value = np.where(
            act, w_delay_n * links.size_bits / _RS, 0.0)
        self.p_dl.value = np.where(
            act,
            (links.rate_ref + links.slope * links.s_ref
             - links.rate_min) / _RS, 1.0)
        self.p_nudge.value = act.astype(float)

    def solve(self, solver="CLARABEL"):
        """Returns (plan or None, info dict).  Positions are rebuilt from
        the returned velocities so the dynamics hold to machine precision;
        any solver failure is reported as a stall, never raised."""
        t0 = time.perf_counter()
        info = {"status": None, "solver": None, "seconds": 0.0}
        tried = []
        order = [solver, "SCS"] if solver != "SCS" else ["SCS"]
        for name in order:
            try:
                if name == "CLARABEL":
                    self.problem.solve(
                        solver=cp.CLARABEL, max_iter=200,
                        reduced_tol_gap_rel=1e-5, reduced_tol_feas=1e-7)
                elif name == "SCS":
                    self.problem.solve(solver=cp.SCS, eps=1e-6,
                                       max_iters=20000)
                else:
                    self.problem.solve(solver=name)
            except (cp.SolverError, Exception):
                tried.append((name, "exception"))
                continue
            if self.problem.status in ("optimal", "optimal_inaccurate"):
                info["status"] = self.problem.status
                info["solver"] = name
                break
            tried.append((name, self.problem.status))
        info["seconds"] = time.perf_counter() - t0
        info["attempts"] = tried
        if info["status"] is None:
            return None, info
        v = self._vh.value.reshape(self._m, self._n, 2) * self.vs
        q0 = self._qh.value.reshape(self._m, self._n, 2)[:, 0] * _QS
        plan = TrajectoryPlan.from_velocity(q0, v, self._dt, close_loop=True)
        return plan, info


def solve_subproblem(subproblem: TrajectorySubproblem, trust: TrajectoryPlan,
                     links: LinkTable, w_delay_n, solver="CLARABEL"):
    """Load one trust point and solve; see TrajectorySubproblem.solve."""
    subproblem.load(trust, links, w_delay_n)
    return subproblem.solve(solver=solver)


_COMPILED: dict = {}


def compiled_subproblem(scenario: Scenario, k_rows,
                        weights) -> TrajectorySubproblem:
    """Reuse one compiled graph per fleet structure.

    The graph bakes in only the kinematic envelope, the propulsion
    constants, the slot grid, and the energy weight; everything
    task-dependent arrives through parameters, so runs over different
    seeds (or different task statistics) share the compile.
    """
    key = (scenario.time.n_slots, round(scenario.time.slot_s, 12), k_rows,
           weights.w_energy / weights.normalizers.energy_j,
           tuple((m.v_min_mps, m.v_max_mps, m.a_max_mps2,
                  m.min_separation_m, m.propulsion)
                 for m in scenario.uavs))
    sub = _COMPILED.get(key)
    if sub is None:
        sub = TrajectorySubproblem(scenario, k_rows=k_rows, weights=weights)
        _COMPILED[key] = sub
    return sub


# ---------------------------------------------------------------------------
# the guarded outer loop

@dataclass
class SCAInfo:
    iterations: int = 0
    objective_sequence: list = field(default_factory=list)
    solver_log: list = field(default_factory=list)
    stalled: bool = False
    converged: bool = False


def sca_optimize(scenario: Scenario, tasks: TaskSchedule,
                 offload: OffloadMatrix, alloc: AllocationMatrix,
                 traj0: TrajectoryPlan, *, weights=None, max_iters=None,
                 tol=None, subproblem=None) -> tuple:
    """Improve the flight plan while offloads and shares stay fixed.

    Each candidate is re-scored with the exact model and re-audited; a
    candidate that fails either check is pulled halfway back toward the
    trust plan before giving up.  The returned plan is always the best
    exactly-scored feasible iterate, so the caller's objective cannot go
    up, and a dead subproblem only costs progress, not correctness.
    """
    sp = scenario.solver
    max_iters = max_iters if max_iters is not None else sp.sca_max_iters
    tol = tol if tol is not None else sp.sca_tol
    w = weights if weights is not None else scenario.weights
    if w.normalizers is None:
        w = w.with_normalizers(cm.normalizers(scenario, tasks))
    w1 = w.w_delay / w.normalizers.delay_s

    k_rows = sp.max_users_per_uav
    if subproblem is None:
        subproblem = TrajectorySubproblem(scenario, k_rows=k_rows, weights=w)

    info = SCAInfo()
    best = traj0
    best_rho = cm.evaluate(scenario, tasks, offload, alloc, best,
                           weights=w, check="off").objective
    info.objective_sequence.append(best_rho)

    trust = best
    for it in range(max_iters):
        links = build_link_table(scenario, tasks, offload, alloc, trust,
                                 k_rows)
        plan, run = solve_subproblem(subproblem, trust, links, w1,
                                     solver=sp.subproblem_solver)
        info.solver_log.append(run)
        if plan is None:
            info.stalled = True
            break
        accepted = None
        candidate = plan
        for _ in range(6):
            audit = cm.evaluate(scenario, tasks, offload, alloc, candidate,
                                weights=w, check="audit").audit
            if audit.ok:
                rho = cm.evaluate(scenario, tasks, offload, alloc, candidate,
                                  weights=w, check="off").objective
                if rho <= best_rho + 1e-12 * max(1.0, abs(best_rho)):
                    accepted = (candidate, rho)
                    break
            v_half = 0.5 * (candidate.v + trust.v)
            candidate = TrajectoryPlan.from_velocity(
                candidate.q[:, 0], v_half, scenario.time.slot_s,
                close_loop=True)
        if accepted is None:
            info.stalled = True
            break
        candidate, rho = accepted
        info.iterations = it + 1
        info.objective_sequence.append(rho)
        gain = best_rho - rho
        best, best_rho = candidate, rho
        trust = candidate
        if gain <= tol * max(abs(best_rho), 1e-12):
            info.converged = True
            break
    return best, info
