"""Binary offload decisions via LP relaxation, thresholding, and repair.

With the CPU shares and trajectories held fixed, each slot decouples and
the objective is affine in the offload indicators, so the relaxation is a
per-slot transportation LP.  Its constraint matrix is an interval/network
structure with integral vertices, which is why the threshold step so often
returns an already-integral plan; when it does not, `integrality_report`
quantifies the damage and `repair` restores feasibility greedily.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import cost_model as cm
from .cost_model import AllocationMatrix, OffloadMatrix, TrajectoryPlan
from .scenario import Scenario, TaskSchedule


@dataclass
class CoefficientSet:
    """Absolute per-cell costs with fixed CPU pricing and fixed trajectories.

    c_local[u, n] is the cost of running locally; c_offload[m, u, n] the
    cost of serving u from m (inf when the cell is unusable: no task, dead
    link, or the offload deadline cannot be met at the priced CPU share).
    """

    c_local: np.ndarray            # (U, N)
    c_offload: np.ndarray          # (M, U, N), +inf where masked
    t_local: np.ndarray            # (U, N) seconds
    t_offload: np.ndarray          # (M, U, N) seconds, +inf where dead
    deadline_s: np.ndarray         # (U,)
    f_pricing_hz: np.ndarray       # (M, U, N) CPU share used for pricing

    @property
    def shape(self):
        return self.c_offload.shape

    def marginal(self) -> np.ndarray:
        """c_offload - c_local, broadcast to (M, U, N)."""
        return self.c_offload - self.c_local[None, :, :]

    def objective_of(self, offload: OffloadMatrix) -> float:
        """Absolute coefficient objective of a binary plan."""
        a = offload.a
        covered = a.sum(axis=1)
        total = float((self.c_local * (1 - covered)).sum())
        sel = np.transpose(a, (1, 0, 2)).astype(bool)
        total += float(self.c_offload[sel].sum())
        return total


@dataclass
class FractionalAssignment:
    """Relaxed plan: x[u, n] local share, y[m, u, n] offload share."""

    x: np.ndarray
    y: np.ndarray
    objective: float
    objective_sequence: list = field(default_factory=list)


@dataclass
class RoundingReport:
    """Certificate of how much thresholding hurt.

    delta1: worst fractional over-subscription of a UAV quota.
    delta2: worst share-weighted offload-deadline excess among kept cells.
    zeta in (0, 1]: 1 means the rounding is exact for this instance.
    """

    delta1: float
    delta2: float
    xi: float
    zeta: float
    relaxed_objective: float
    rounded_objective: float


def pricing_allocation(scenario: Scenario, offload_prev: OffloadMatrix,
                       alloc_prev: AllocationMatrix) -> np.ndarray:
    """CPU share assumed for every candidate cell when pricing offloads.

    Cells already assigned keep their granted share; any other cell is
    priced at an even quota split of the UAV CPU.  The pricing must not
    depend on which other cells end up selected, so the LP objective stays
    affine and the offload step is an exact minimizer at this pricing.
    """
    m_count, u_count, n_count = alloc_prev.shape
    quota = scenario.solver.max_users_per_uav
    f = np.empty((m_count, u_count, n_count))
    for mi, uav in enumerate(scenario.uavs):
        f[mi] = uav.cpu_max_hz / quota
    held = np.transpose(offload_prev.a, (1, 0, 2)).astype(bool)
    f[held] = alloc_prev.f[held]
    return f


def offload_cost_coefficients(scenario: Scenario, tasks: TaskSchedule,
                              f_pricing_hz: np.ndarray, traj: TrajectoryPlan,
                              weights=None) -> CoefficientSet:
    """Build the per-cell cost table at fixed CPU pricing and trajectory."""
    w = weights if weights is not None else scenario.weights
    if w.normalizers is None:
        w = w.with_normalizers(cm.normalizers(scenario, tasks))
    norm = w.normalizers
    w1 = w.w_delay / norm.delay_s
    w2 = w.w_energy / norm.energy_j
    w3 = w.w_offload / norm.bits

    u_count, n_count = tasks.size_bits.shape
    m_count = scenario.n_uavs
    cycles = tasks.cycles                            # (U, N)
    cpu = np.array([u.cpu_hz for u in scenario.users])
    t_local = cycles / cpu[:, None]
    c_local = w1 * t_local

    rates = cm.link_rates(scenario, traj)            # (U, M, N)
    rates_mun = np.transpose(rates, (1, 0, 2))
    size = tasks.size_bits[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_up = np.where(rates_mun > 0, size / rates_mun, np.inf)
        t_cpu = np.where(f_pricing_hz > 0, cycles[None] / f_pricing_hz, np.inf)
    t_offload = t_up + t_cpu
    kappa = np.array([m.switch_cap_coeff for m in scenario.uavs])
    e_comp = kappa[:, None, None] * f_pricing_hz ** 2 * cycles[None]
    c_offload = w1 * t_offload + w2 * e_comp - w3 * size

    dead = (size <= 0) | (t_offload > tasks.deadline_s[None, :, None])
    c_offload = np.where(dead, np.inf, c_offload)
    t_offload = np.where(size <= 0, 0.0, t_offload)
    return CoefficientSet(c_local=c_local, c_offload=c_offload,
                          t_local=t_local, t_offload=t_offload,
                          deadline_s=np.array(tasks.deadline_s),
                          f_pricing_hz=np.array(f_pricing_hz))


def solve_relaxed(coeffs: CoefficientSet, quota: int, *, tol=1e-9,
                  max_alternations=8) -> FractionalAssignment:
    """Alternate closed-form local shares with the per-slot offload LP.

    The LP objective only involves the offload shares, so the alternation
    settles after one LP pass; the loop exists to observe (and let tests
    assert) the monotone objective sequence.
    """
    m_count, u_count, n_count = coeffs.shape
    y = np.zeros((m_count, u_count, n_count))
    marg = coeffs.marginal()
    marg_fin = np.where(np.isfinite(marg), marg, 0.0)
    base = float(coeffs.c_local.sum())
    seq = []
    prev = math.inf
    for _ in range(max_alternations):
        for n in range(n_count):
            y[:, :, n] = _slot_lp(marg[:, :, n], quota)
        obj = base + float((marg_fin * y).sum())
        seq.append(obj)
        if abs(prev - obj) <= tol * max(1.0, abs(obj)):
            break
        prev = obj
    x = 1.0 - y.sum(axis=0)
    return FractionalAssignment(x=x, y=y, objective=seq[-1],
                                objective_sequence=seq)


def _slot_lp(marg_mu: np.ndarray, quota: int) -> np.ndarray:
    """One slot's transportation LP over cells with finite, negative-capable
    marginals.  Returns y of shape (M, U)."""
    m_count, u_count = marg_mu.shape
    cells = [(m, u) for m in range(m_count) for u in range(u_count)
             if np.isfinite(marg_mu[m, u]) and marg_mu[m, u] < 0]
    y = np.zeros((m_count, u_count))
    if not cells:
        return y
    c = np.array([marg_mu[m, u] for m, u in cells])
    n_var = len(cells)
    rows = []
    rhs = []
    for u in range(u_count):
        members = [i for i, (m, uu) in enumerate(cells) if uu == u]
        if members:
            row = np.zeros(n_var)
            row[members] = 1.0
            rows.append(row)
            rhs.append(1.0)
    for m in range(m_count):
        members = [i for i, (mm, uu) in enumerate(cells) if mm == m]
        if members:
            row = np.zeros(n_var)
            row[members] = 1.0
            rows.append(row)
            rhs.append(float(quota))
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs),
                  bounds=[(0.0, 1.0)] * n_var, method="highs")
    if not res.success:
        raise RuntimeError(f"offload LP failed: {res.message}")
    for i, (m, u) in enumerate(cells):
        y[m, u] = res.x[i]
    return y


def threshold_round(fractional: FractionalAssignment,
                    delta: float) -> OffloadMatrix:
    """Round shares at threshold delta (inclusive).

    When several UAVs pass the threshold for one task, only the largest
    share survives (ties broken toward the lowest UAV index) so the
    single-server rule cannot break at delta = 0.5 exactly.
    """
    m_count, u_count, n_count = fractional.y.shape
    a = np.zeros((u_count, m_count, n_count), dtype=np.int8)
    for n in range(n_count):
        for u in range(u_count):
            shares = fractional.y[:, u, n]
            passing = np.flatnonzero(shares >= delta)
            if passing.size:
                best = passing[np.argmax(shares[passing])]
                a[u, best, n] = 1
    return OffloadMatrix(a)


def integrality_report(relaxed_objective: float,
                       fractional: FractionalAssignment,
                       rounded: OffloadMatrix, coeffs: CoefficientSet,
                       xi: float, quota: int) -> RoundingReport:
    """Certificate comparing the rounded plan against the relaxation.

    delta1 looks at quota mass: for each (m, n), the fractional shares of
    the cells that were rounded up, minus the quota, clipped at zero.
    delta2 looks at deadlines on the same kept cells, weighting the excess
    by the fractional share.  zeta = |rho| / (|rho| + xi (delta1+delta2))
    equals 1 exactly when rounding changed nothing that matters.
    """
    kept = np.transpose(rounded.a, (1, 0, 2)).astype(bool)   # (M, U, N)
    mass = np.where(kept, fractional.y, 0.0).sum(axis=1)     # (M, N)
    delta1 = float(np.maximum(mass - quota, 0.0).max(initial=0.0))

    # dead cells carry infinite upload time; cap so 0-share cells cannot
    # produce nan while any real share still drives zeta to ~0
    t_kept = np.minimum(np.where(kept, coeffs.t_offload, 0.0), 1e30)
    excess = np.where(kept, fractional.y, 0.0) * t_kept \
        - coeffs.deadline_s[None, :, None]
    delta2 = float(np.maximum(np.where(kept, excess, 0.0), 0.0)
                   .max(initial=0.0))

    rho = max(abs(relaxed_objective), 1e-12)
    zeta = rho / (rho + xi * (delta1 + delta2))
    return RoundingReport(delta1=delta1, delta2=delta2, xi=xi, zeta=zeta,
                          relaxed_objective=relaxed_objective,
                          rounded_objective=coeffs.objective_of(rounded))


def repair(rounded: OffloadMatrix, coeffs: CoefficientSet,
           quota: int) -> OffloadMatrix:
    """Demote cells until the plan is feasible again.

    Order: drop unusable cells first, then enforce one server per task
    (keep the best marginal), then per-UAV quotas (evict the weakest
    marginals, highest user index first on ties).  Demotion to local is
    always feasible, so the result is feasible and the pass is idempotent.
    """
    a = np.array(rounded.a)
    marg = coeffs.marginal()
    u_count, m_count, n_count = a.shape

    for n in range(n_count):
        for u in range(u_count):
            for m in range(m_count):
                if a[u, m, n] and not np.isfinite(coeffs.c_offload[m, u, n]):
                    a[u, m, n] = 0
        for u in range(u_count):
            servers = np.flatnonzero(a[u, :, n])
            if servers.size > 1:
                best = servers[np.argmin(marg[servers, u, n])]
                a[u, :, n] = 0
                a[u, best, n] = 1
        for m in range(m_count):
            users = np.flatnonzero(a[:, m, n])
            if users.size > quota:
                order = sorted(users, key=lambda u: (marg[m, u, n], u))
                for u in order[quota:]:
                    a[u, m, n] = 0
    return OffloadMatrix(a)


def exact_offload_oracle(coeffs: CoefficientSet, quota: int, *,
                         size_limit=18):
    """Brute-force optimum of the integer offload problem.

    Slots decouple, so each slot enumerates every feasible assignment of
    users to {local, uav 0..M-1}.  Refuses instances with more than
    `size_limit` decision cells; this is a reference, not a solver.
    """
    m_count, u_count, n_count = coeffs.shape
    if m_count * u_count * n_count > size_limit:
        raise ValueError(
            f"oracle limited to {size_limit} cells, "
            f"got {m_count * u_count * n_count}")
    a = np.zeros((u_count, m_count, n_count), dtype=np.int8)
    total = 0.0
    choices = [-1] + list(range(m_count))
    for n in range(n_count):
        best_cost = math.inf
        best_assign = None
        for assign in itertools.product(choices, repeat=u_count):
            counts = [0] * m_count
            cost = 0.0
            ok = True
            for u, m in enumerate(assign):
                if m < 0:
                    cost += coeffs.c_local[u, n]
                    continue
                if not np.isfinite(coeffs.c_offload[m, u, n]):
                    ok = False
                    break
                counts[m] += 1
                if counts[m] > quota:
                    ok = False
                    break
                cost += coeffs.c_offload[m, u, n]
            if ok and cost < best_cost:
                best_cost = cost
                best_assign = assign
        for u, m in enumerate(best_assign):
            if m >= 0:
                a[u, m, n] = 1
        total += best_cost
    return OffloadMatrix(a), float(total)


def plan_offload(scenario: Scenario, tasks: TaskSchedule,
                 f_pricing_hz: np.ndarray, traj: TrajectoryPlan,
                 weights=None) -> dict:
    """Full pipeline: coefficients, relaxation, rounding, repair, reports."""
    sp = scenario.solver
    coeffs = offload_cost_coefficients(scenario, tasks, f_pricing_hz, traj,
                                       weights)
    frac = solve_relaxed(coeffs, sp.max_users_per_uav)
    rounded = threshold_round(frac, sp.rounding_delta)
    pre = integrality_report(frac.objective, frac, rounded, coeffs,
                             sp.integrality_xi, sp.max_users_per_uav)
    fixed = repair(rounded, coeffs, sp.max_users_per_uav)
    post = integrality_report(frac.objective, frac, fixed, coeffs,
                              sp.integrality_xi, sp.max_users_per_uav)
    return {"coefficients": coeffs, "fractional": frac, "rounded": rounded,
            "repaired": fixed, "report_pre_repair": pre,
            "report_post_repair": post}
