"""Offload pipeline: coefficients, relaxation, rounding, repair, reports.

Frozen references:
  marginal example   1*(-0.2) + 1*0.05 - 1*0.3 - c_local  (built by hand)
  delta_1 example    shares {0.6, 0.6} on a 1-slot UAV    -> 0.2
  zeta example       |rho|=2, xi=1, deltas=0.2            -> 0.9090909090909091
"""

import math

import numpy as np
import pytest

from uavmec import cost_model as cm
from uavmec import offload as ol
from uavmec.cost_model import AllocationMatrix, OffloadMatrix
from uavmec.scenario import TaskSchedule
from uavmec.trajectory import initial_trajectory


def coeff_set(c_local, c_off, t_off=None, deadline=None):
    """Hand-made CoefficientSet; infinities mark unusable cells."""
    c_local = np.asarray(c_local, dtype=float)
    c_off = np.asarray(c_off, dtype=float)
    m, u, n = c_off.shape
    if t_off is None:
        t_off = np.full((m, u, n), 0.1)
    if deadline is None:
        deadline = np.full(u, 1.0)
    t_off = np.where(np.isfinite(c_off), np.asarray(t_off, float), np.inf)
    return ol.CoefficientSet(
        c_local=c_local, c_offload=c_off, t_local=c_local * 0.1,
        t_offload=t_off, deadline_s=np.asarray(deadline, float),
        f_pricing_hz=np.full((m, u, n), 1.2e9))


def frac(y, objective=0.0):
    y = np.asarray(y, dtype=float)
    return ol.FractionalAssignment(x=1.0 - y.sum(axis=0), y=y,
                                   objective=objective)


# ---------------------------------------------------------------------------
# coefficients

def test_coefficients_from_scenario(tiny_scenario, tiny_tasks):
    traj = initial_trajectory(tiny_scenario, "circular")
    price = np.full((2, 2, 10), 1.2e9)
    coeffs = ol.offload_cost_coefficients(tiny_scenario, tiny_tasks, price,
                                          traj)
    w = tiny_scenario.weights.with_normalizers(
        cm.normalizers(tiny_scenario, tiny_tasks))
    rates = cm.link_rates(tiny_scenario, traj)
    u, n = 1, 3
    task = tiny_tasks.task(u, n)
    t_off = task.size_bits / rates[u, 0, n] + task.cycles / 1.2e9
    want = (w.w_delay / w.normalizers.delay_s * t_off
            + w.w_energy / w.normalizers.energy_j
            * cm.uav_compute_energy(task, 1.2e9, tiny_scenario.uavs[0])
            - w.w_offload / w.normalizers.bits * task.size_bits)
    if t_off <= task.deadline_s:
        assert coeffs.c_offload[0, u, n] == pytest.approx(want, rel=1e-12)
    assert coeffs.t_local[u, n] == pytest.approx(
        cm.local_delay(task, tiny_scenario.users[u]), rel=1e-12)
    assert coeffs.shape == (2, 2, 10)


def test_coefficients_mask_dead_cells(micro_scenario):
    sizes = np.zeros((1, 6))
    sizes[0, 0] = 2e6
    sched = TaskSchedule(sizes, np.array([1000.0]),
                         np.array([0.05]))     # nothing fits a 50 ms deadline
    traj = initial_trajectory(micro_scenario, "circular")
    price = np.full((1, 1, 6), 1.2e9)
    coeffs = ol.offload_cost_coefficients(micro_scenario, sched, price, traj)
    assert np.isinf(coeffs.c_offload).all()       # deadline mask + no-task
    assert coeffs.t_offload[0, 0, 1] == 0.0       # no task, no upload time
    assert math.isfinite(coeffs.t_offload[0, 0, 0])


def test_marginal_and_objective_of():
    coeffs = coeff_set([[1.0]], [[[0.55]]])
    # manual pieces: w1*T + w2*E - w3*D = -0.2 + 0.05 - 0.3 = -0.45 offload
    coeffs.c_offload[...] = 1.0 * (-0.2) + 1.0 * 0.05 - 1.0 * 0.3
    assert coeffs.marginal()[0, 0, 0] == pytest.approx(-1.45)
    local = OffloadMatrix.all_local(1, 1, 1)
    sent = OffloadMatrix(np.ones((1, 1, 1), dtype=np.int8))
    assert coeffs.objective_of(local) == pytest.approx(1.0)
    assert coeffs.objective_of(sent) == pytest.approx(-0.45)


# ---------------------------------------------------------------------------
# relaxation

def test_relaxed_all_positive_marginals_stay_local():
    coeffs = coeff_set([[0.5, 0.5]], [[[0.9, 0.8]]])
    out = ol.solve_relaxed(coeffs, quota=1)
    assert (out.y == 0.0).all()
    assert (out.x == 1.0).all()
    assert out.objective == pytest.approx(1.0)


def test_relaxed_negative_marginal_fully_offloads():
    coeffs = coeff_set([[1.0]], [[[-0.45]]])
    out = ol.solve_relaxed(coeffs, quota=1)
    assert out.y[0, 0, 0] == pytest.approx(1.0)
    assert out.x[0, 0] == pytest.approx(0.0)
    assert out.objective == pytest.approx(-0.45)


def test_relaxed_respects_quota():
    # three users want the single uav slot; only the best one fits
    c_off = np.array([[[-1.0], [-0.6], [-0.2]]])     # (1, 3, 1)
    coeffs = coeff_set([[2.0], [2.0], [2.0]], c_off)
    out = ol.solve_relaxed(coeffs, quota=1)
    assert out.y.sum() == pytest.approx(1.0)
    assert out.y[0, 0, 0] == pytest.approx(1.0)
    two = ol.solve_relaxed(coeffs, quota=2)
    assert two.y.sum() == pytest.approx(2.0)
    assert two.y[0, 2, 0] == pytest.approx(0.0)


def test_relaxed_masked_cells_never_carry_mass():
    c_off = np.array([[[np.inf], [-0.5]]])
    coeffs = coeff_set([[1.0], [1.0]], c_off)
    out = ol.solve_relaxed(coeffs, quota=2)
    assert out.y[0, 0, 0] == 0.0
    assert out.y[0, 1, 0] == pytest.approx(1.0)


def test_relaxed_objective_sequence_monotone(tiny_scenario, tiny_tasks):
    traj = initial_trajectory(tiny_scenario, "circular")
    price = np.full((2, 2, 10), 1.2e9)
    coeffs = ol.offload_cost_coefficients(tiny_scenario, tiny_tasks, price,
                                          traj)
    out = ol.solve_relaxed(coeffs, quota=1)
    seq = out.objective_sequence
    assert all(b <= a + 1e-12 for a, b in zip(seq, seq[1:]))
    assert out.objective == seq[-1]
    # coverage split: local + offload shares sum to one per task
    assert np.allclose(out.x + out.y.sum(axis=0), 1.0)


def test_relaxed_vertices_are_integral(tiny_scenario, tiny_tasks):
    traj = initial_trajectory(tiny_scenario, "circular")
    price = np.full((2, 2, 10), 1.2e9)
    coeffs = ol.offload_cost_coefficients(tiny_scenario, tiny_tasks, price,
                                          traj)
    out = ol.solve_relaxed(coeffs, quota=1)
    dist = np.minimum(np.abs(out.y), np.abs(out.y - 1.0))
    assert dist.max() < 1e-7


# ---------------------------------------------------------------------------
# rounding

def test_threshold_round_inclusive_at_delta():
    y = np.zeros((1, 1, 1))
    y[0, 0, 0] = 0.5
    rounded = ol.threshold_round(frac(y), delta=0.5)
    assert rounded.a[0, 0, 0] == 1
    below = np.zeros((1, 1, 1))
    below[0, 0, 0] = 0.499999
    assert ol.threshold_round(frac(below), delta=0.5).a.sum() == 0


def test_threshold_round_single_server_tie_break():
    # both uavs pass the threshold; only the larger share survives,
    # ties go to the lower uav index
    y = np.zeros((2, 1, 1))
    y[0, 0, 0] = 0.5
    y[1, 0, 0] = 0.5
    rounded = ol.threshold_round(frac(y), delta=0.5)
    assert rounded.a[0, 0, 0] == 1
    assert rounded.a[0, 1, 0] == 0
    y[1, 0, 0] = 0.6
    rounded = ol.threshold_round(frac(y), delta=0.5)
    assert rounded.a[0, 0, 0] == 0
    assert rounded.a[0, 1, 0] == 1


def test_integral_relaxation_rounds_to_itself():
    y = np.zeros((2, 2, 2))
    y[0, 0, 0] = 1.0
    y[1, 1, 1] = 1.0
    rounded = ol.threshold_round(frac(y), delta=0.5)
    assert np.array_equal(np.transpose(rounded.a, (1, 0, 2)), y)


# ---------------------------------------------------------------------------
# rounding certificate

def test_report_frozen_zeta_example():
    # two users rounded onto a quota-1 uav with shares {0.6, 0.6}
    y = np.zeros((1, 2, 1))
    y[0, :, 0] = 0.6
    a = np.ones((2, 1, 1), dtype=np.int8)
    coeffs = coeff_set([[1.0], [1.0]], np.full((1, 2, 1), -1.0))
    rep = ol.integrality_report(-2.0, frac(y), OffloadMatrix(a), coeffs,
                                xi=1.0, quota=1)
    assert rep.delta1 == pytest.approx(0.2, rel=1e-12)
    assert rep.delta2 == 0.0
    assert rep.zeta == pytest.approx(0.9090909090909091, rel=1e-12)


def test_report_deadline_excess():
    y = np.zeros((1, 1, 1))
    y[0, 0, 0] = 0.8
    a = np.ones((1, 1, 1), dtype=np.int8)
    coeffs = coeff_set([[1.0]], [[[-1.0]]], t_off=[[[2.0]]], deadline=[1.0])
    rep = ol.integrality_report(-1.0, frac(y), OffloadMatrix(a), coeffs,
                                xi=1.0, quota=1)
    assert rep.delta1 == 0.0
    assert rep.delta2 == pytest.approx(0.8 * 2.0 - 1.0, rel=1e-12)
    assert rep.zeta == pytest.approx(1.0 / (1.0 + 0.6), rel=1e-12)


def test_report_exact_rounding_scores_one():
    y = np.zeros((1, 1, 2))
    y[0, 0, 0] = 1.0
    a = np.zeros((1, 1, 2), dtype=np.int8)
    a[0, 0, 0] = 1
    coeffs = coeff_set([[1.0, 1.0]], [[[-1.0, 0.5]]])
    rep = ol.integrality_report(0.0, frac(y), OffloadMatrix(a), coeffs,
                                xi=1.0, quota=1)
    assert rep.zeta == 1.0


def test_report_dead_kept_cell_drives_zeta_down():
    y = np.zeros((1, 1, 1))
    y[0, 0, 0] = 0.9
    a = np.ones((1, 1, 1), dtype=np.int8)
    coeffs = coeff_set([[1.0]], [[[np.inf]]])
    rep = ol.integrality_report(-1.0, frac(y), OffloadMatrix(a), coeffs,
                                xi=1.0, quota=1)
    assert rep.zeta < 1e-12


# ---------------------------------------------------------------------------
# repair

def test_repair_restores_quota():
    a = np.ones((2, 1, 1), dtype=np.int8)    # two users on a quota-1 uav
    c_off = np.array([[[-1.0], [-0.5]]])
    coeffs = coeff_set([[1.0], [1.0]], c_off)
    fixed = ol.repair(OffloadMatrix(a), coeffs, quota=1)
    assert fixed.a[0, 0, 0] == 1             # the better marginal stays
    assert fixed.a[1, 0, 0] == 0


def test_repair_quota_tie_breaks_to_lower_user():
    a = np.ones((2, 1, 1), dtype=np.int8)
    c_off = np.array([[[-0.5], [-0.5]]])
    coeffs = coeff_set([[1.0], [1.0]], c_off)
    fixed = ol.repair(OffloadMatrix(a), coeffs, quota=1)
    assert fixed.a[0, 0, 0] == 1
    assert fixed.a[1, 0, 0] == 0


def test_repair_single_server_rule():
    a = np.zeros((1, 2, 1), dtype=np.int8)
    a[0, :, 0] = 1                           # one user on both uavs
    c_off = np.array([[[-0.2]], [[-0.9]]])
    coeffs = coeff_set([[1.0]], c_off)
    fixed = ol.repair(OffloadMatrix(a), coeffs, quota=1)
    assert fixed.a[0, 0, 0] == 0
    assert fixed.a[0, 1, 0] == 1


def test_repair_drops_unusable_cells():
    a = np.ones((1, 1, 1), dtype=np.int8)
    coeffs = coeff_set([[1.0]], [[[np.inf]]])
    fixed = ol.repair(OffloadMatrix(a), coeffs, quota=1)
    assert fixed.a.sum() == 0


def test_repair_idempotent():
    rng = np.random.default_rng(4)
    for _ in range(20):
        m, u, n = 2, 3, 2
        c_off = rng.uniform(-1.0, 1.0, size=(m, u, n))
        c_off[rng.random((m, u, n)) < 0.2] = np.inf
        coeffs = coeff_set(rng.uniform(0.5, 1.5, size=(u, n)), c_off)
        a = (rng.random((u, m, n)) < 0.6).astype(np.int8)
        once = ol.repair(OffloadMatrix(a), coeffs, quota=1)
        twice = ol.repair(once, coeffs, quota=1)
        assert np.array_equal(once.a, twice.a)
        assert once.coverage().max(initial=0) <= 1
        assert once.load().max(initial=0) <= 1


# ---------------------------------------------------------------------------
# oracle and full pipeline

def test_oracle_size_limit():
    coeffs = coeff_set(np.ones((4, 2)), np.zeros((3, 4, 2)))
    with pytest.raises(ValueError):
        ol.exact_offload_oracle(coeffs, quota=1, size_limit=18)


def test_oracle_hand_checkable_instance():
    # quota 1: in both slots user 0 wins the uav, user 1 runs locally;
    # totals by hand: (-1.0 + 1.0) + (0.3 + 1.0) = 1.3
    c_off = np.array([[[-1.0, 0.3], [-0.6, 0.4]]])
    coeffs = coeff_set([[1.0, 1.0], [1.0, 1.0]], c_off)
    best_a, best = ol.exact_offload_oracle(coeffs, quota=1)
    assert best == pytest.approx(1.3)
    assert best_a.a[0, 0, 0] == 1
    assert best_a.a[1, 0, 0] == 0
    assert best_a.a[0, 0, 1] == 1
    assert best_a.a[1, 0, 1] == 0


def test_pricing_allocation_keeps_granted_shares(tiny_scenario):
    a = np.zeros((2, 2, 10), dtype=np.int8)
    a[0, 0, 3] = 1
    held = OffloadMatrix(a)
    f_prev = np.zeros((2, 2, 10))
    f_prev[0, 0, 3] = 7e8
    price = ol.pricing_allocation(tiny_scenario, held,
                                  AllocationMatrix(f_prev))
    assert price[0, 0, 3] == 7e8
    assert price[0, 0, 4] == 1.2e9     # unassigned cells price at cap/quota
    assert price[1, 1, 0] == 1.2e9


def test_plan_offload_end_to_end(tiny_scenario, tiny_tasks):
    traj = initial_trajectory(tiny_scenario, "circular")
    price = np.full((2, 2, 10), 1.2e9)
    out = ol.plan_offload(tiny_scenario, tiny_tasks, price, traj)
    assert set(out) == {"coefficients", "fractional", "rounded", "repaired",
                        "report_pre_repair", "report_post_repair"}
    a = out["repaired"]
    assert a.coverage().max(initial=0) <= 1
    assert a.load().max(initial=0) <= 1
    # integral relaxation (transportation vertices): repair changes nothing
    assert np.array_equal(out["rounded"].a, a.a)
    assert out["report_post_repair"].zeta == pytest.approx(1.0, abs=1e-9)
    # the binary plan achieves the relaxed optimum
    assert out["coefficients"].objective_of(a) == pytest.approx(
        out["fractional"].objective, rel=1e-9)
