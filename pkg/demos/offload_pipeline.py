"""Offload planning end to end: price, relax, round, repair, certify.

Run from the repository root:  python3 demos/offload_pipeline.py
"""

import numpy as np

from uavmec import offload as ol
from uavmec import trajectory as tj
from uavmec.cost_model import normalizers
from uavmec.scenario import generate_tasks, load_scenario


def main():
    scenario = load_scenario({
        "time": {"horizon_s": 20.0, "n_slots": 10},
        "users": {"count": 2, "positions_m": [[800.0, 1200.0],
                                              [2000.0, 1000.0]]},
        "uavs": {"count": 2, "a_max_mps2": 20.0},
    })
    tasks = generate_tasks(scenario, seed=0)
    weights = scenario.weights.with_normalizers(normalizers(scenario, tasks))

    # price CPU as if every admitted task got the even split, then score
    # each (uav, user, slot) cell against staying local
    quota = scenario.solver.max_users_per_uav
    price = np.zeros((scenario.n_uavs, scenario.n_users,
                      scenario.time.n_slots))
    for mi, uav in enumerate(scenario.uavs):
        price[mi] = uav.cpu_max_hz / quota
    traj = tj.initial_trajectory(scenario)
    coeffs = ol.offload_cost_coefficients(scenario, tasks, price, traj,
                                          weights)
    dead = int(np.isinf(coeffs.c_offload).sum())
    print(f"{coeffs.c_offload.size} offload cells, {dead} priced out by "
          f"the deadline")

    frac = ol.solve_relaxed(coeffs, quota)
    print(f"relaxed optimum {frac.objective:.6f} after "
          f"{len(frac.objective_sequence)} alternation(s)")

    rounded = ol.threshold_round(frac, scenario.solver.rounding_delta)
    fixed = ol.repair(rounded, coeffs, quota)
    report = ol.integrality_report(frac.objective, frac, fixed, coeffs,
                                   scenario.solver.integrality_xi, quota)
    print(f"rounding certificate: delta1={report.delta1:.3e} "
          f"delta2={report.delta2:.3e} zeta={report.zeta:.6f}")
    print(f"binary objective {report.rounded_objective:.6f} vs relaxed "
          f"{report.relaxed_objective:.6f}")

    total = tasks.size_bits.sum()
    sent = (fixed.a * tasks.size_bits[:, None, :]).sum()
    print(f"\nper-user offload slots (1 = sent to a UAV):")
    served = fixed.a.sum(axis=1)
    for u in range(scenario.n_users):
        print(f"  user {u}: {''.join(str(int(x)) for x in served[u])}")
    print(f"{sent / total:.1%} of all bits leave the ground")


if __name__ == "__main__":
    main()
