"""CPU-share scheduling on each UAV with offloads and trajectories fixed.

Per UAV and slot the problem is separable and convex: each served task
contributes a weighted compute delay (falling in f) and a weighted compute
energy (rising as f^2), subject to the shared CPU budget.  First-order
optimality gives one cubic per task tied together by the budget's dual
variable, found by bisection.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.optimize import brentq

from . import cost_model as cm
from .cost_model import AllocationMatrix, OffloadMatrix
from .scenario import Scenario, TaskSchedule

log = logging.getLogger(__name__)


def stationarity_residual(f_hz, lam, load_cycles, *, kappa=1e-27,
                          w_delay_n=1.0, w_energy_n=1.0) -> float:
    """Derivative condition for one task's share at dual value lam.

    2 w2 kappa L f^3 + lam f^2 - w1 L, strictly increasing in f, negative
    at 0: the positive root is the task's optimal share before clipping.
    """
    f = float(f_hz)
    return (2.0 * w_energy_n * kappa * load_cycles * f ** 3
            + lam * f ** 2 - w_delay_n * load_cycles)


def unconstrained_share(*, kappa=1e-27, w_delay_n=1.0, w_energy_n=1.0) -> float:
    """Root at lam = 0.  The task load cancels, so every task wants the
    same share when the CPU budget is slack."""
    return (w_delay_n / (2.0 * kappa * w_energy_n)) ** (1.0 / 3.0)


def solve_f_given_lambda(lam, load_cycles, *, kappa=1e-27, w_delay_n=1.0,
                         w_energy_n=1.0) -> float:
    """Positive root of the stationarity cubic, to ~1e-12 relative."""
    if load_cycles <= 0:
        return 0.0
    hi = unconstrained_share(kappa=kappa, w_delay_n=w_delay_n,
                             w_energy_n=w_energy_n)
    if lam <= 0:
        return hi
    return brentq(
        lambda f: stationarity_residual(
            f, lam, load_cycles, kappa=kappa, w_delay_n=w_delay_n,
            w_energy_n=w_energy_n),
        0.0, hi * (1.0 + 1e-12), xtol=1e-3, rtol=1e-12, maxiter=200)


def share_cost(f_hz, load_cycles, *, kappa=1e-27, w_delay_n=1.0,
               w_energy_n=1.0) -> float:
    """Weighted delay + compute-energy cost of granting f_hz to one task."""
    if load_cycles <= 0:
        return 0.0
    if f_hz <= 0:
        return math.inf
    return (w_delay_n * load_cycles / f_hz
            + w_energy_n * kappa * f_hz ** 2 * load_cycles)


def allocate_group(loads, f_cap, *, kappa=1e-27, w_delay_n=1.0,
                   w_energy_n=1.0, floors=None, eps_rel=1e-9,
                   max_doublings=60):
    """Shares for the tasks of one UAV in one slot.

    Returns (f array, lam).  Each share is the clipped cubic root at the
    common dual value; the dual is zero when the budget is slack, else
    bisected until the bracket width falls under eps_rel times its span.
    """
    loads = np.asarray(loads, dtype=float)
    k = loads.size
    if floors is None:
        floors = np.zeros(k)
    floors = np.asarray(floors, dtype=float)
    if floors.max(initial=0.0) > f_cap * (1.0 + 1e-12):
        raise ValueError("a deadline floor exceeds the UAV CPU capacity")
    if floors.sum() > f_cap * (1.0 + 1e-9):
        raise ValueError("deadline floors alone exceed the CPU budget")

    def shares(lam):
        out = np.empty(k)
        for i, load in enumerate(loads):
            root = solve_f_given_lambda(lam, load, kappa=kappa,
                                        w_delay_n=w_delay_n,
                                        w_energy_n=w_energy_n)
            out[i] = min(max(root, floors[i]), f_cap)
        return out

    f0 = shares(0.0)
    if f0.sum() <= f_cap * (1.0 + 1e-12):
        return f0, 0.0

    max_load = loads.max()
    lam_hi = w_delay_n * max_load * (k / f_cap) ** 2 * 1.01
    for _ in range(max_doublings):
        if shares(lam_hi).sum() <= f_cap:
            break
        lam_hi *= 2.0
        log.warning("dual bracket doubled to %.3e", lam_hi)
    else:
        raise ValueError("could not bracket the CPU budget dual")

    lam_lo = 0.0
    eps = eps_rel * lam_hi
    while lam_hi - lam_lo >= eps:
        mid = 0.5 * (lam_lo + lam_hi)
        if shares(mid).sum() > f_cap:
            lam_lo = mid
        else:
            lam_hi = mid
    return shares(lam_hi), lam_hi


def allocate(scenario: Scenario, tasks: TaskSchedule, offload: OffloadMatrix,
             *, floors_hz=None, weights=None):
    """Full allocation matrix for a fixed offload plan.

    floors_hz, when given, is (M, U, N): minimum shares that keep each
    offloaded task inside its deadline at the current trajectory.  Returns
    (AllocationMatrix, duals) with duals of shape (M, N).
    """
    w = weights if weights is not None else scenario.weights
    if w.normalizers is None:
        w = w.with_normalizers(cm.normalizers(scenario, tasks))
    w1 = w.w_delay / w.normalizers.delay_s
    w2 = w.w_energy / w.normalizers.energy_j

    u_count, m_count, n_count = offload.shape
    cycles = tasks.cycles
    f = np.zeros((m_count, u_count, n_count))
    duals = np.zeros((m_count, n_count))
    for mi, uav in enumerate(scenario.uavs):
        kappa = uav.switch_cap_coeff
        cap = uav.cpu_max_hz
        root0 = unconstrained_share(kappa=kappa, w_delay_n=w1, w_energy_n=w2)
        for n in range(n_count):
            users = np.flatnonzero(offload.a[:, mi, n])
            if users.size == 0:
                continue
            floors = (floors_hz[mi, users, n] if floors_hz is not None
                      else np.zeros(users.size))
            if users.size == 1:
                # budget shared with nobody: clip the common root
                u = users[0]
                f[mi, u, n] = min(max(root0, floors[0]), cap)
                continue
            loads = cycles[users, n]
            shares, lam = allocate_group(loads, cap, kappa=kappa,
                                         w_delay_n=w1, w_energy_n=w2,
                                         floors=floors,
                                         eps_rel=scenario.solver.lambda_eps_rel)
            f[mi, users, n] = shares
            duals[mi, n] = lam
    return AllocationMatrix(f), duals


def grid_allocation_oracle(loads, f_cap, *, kappa=1e-27, w_delay_n=1.0,
                           w_energy_n=1.0, floors=None, n_steps=10000):
    """Greedy grid reference for one UAV-slot group.

    The per-task cost is convex in its share, so handing out the budget in
    equal increments to whichever task gains most is optimal up to the
    grid resolution.  Returns (f array, objective).
    """
    loads = np.asarray(loads, dtype=float)
    k = loads.size
    floors = np.zeros(k) if floors is None else np.asarray(floors, float)
    step = f_cap / n_steps
    f = floors.copy()
    budget = f_cap - f.sum()
    if budget < -1e-9 * f_cap:
        raise ValueError("floors exceed capacity")

    def cost(i, fi):
        return share_cost(fi, loads[i], kappa=kappa, w_delay_n=w_delay_n,
                          w_energy_n=w_energy_n)

    while budget >= step * (1.0 - 1e-12):
        gains = np.full(k, -np.inf)
        for i in range(k):
            if f[i] + step <= f_cap:
                gains[i] = cost(i, f[i]) - cost(i, f[i] + step)
        best = int(np.argmax(gains))
        if gains[best] <= 0.0:
            break
        f[best] += step
        budget -= step
    total = sum(cost(i, f[i]) for i in range(k))
    return f, float(total)
