"""All seven policies side by side on one small scene.

Run from the repository root:  python3 demos/policy_comparison.py
"""

from uavmec.optimizer import compare
from uavmec.scenario import load_scenario


def main():
    scenario = load_scenario({
        "time": {"horizon_s": 20.0, "n_slots": 10},
        "users": {"count": 2, "positions_m": [[800.0, 1200.0],
                                              [2000.0, 1000.0]]},
        "uavs": {"count": 2, "a_max_mps2": 20.0},
    })
    table = compare(scenario, seeds=(0, 1, 2))
    print(f"{'policy':<18} {'seed':>4} {'objective':>10} {'delay s':>9} "
          f"{'energy J':>10} {'Mbit off':>9}")
    for row in table.rows:
        print(f"{row['policy']:<18} {row['seed']:>4} "
              f"{row['objective']:>10.4f} {row['delay_s']:>9.2f} "
              f"{row['energy_j']:>10.1f} "
              f"{row['offloaded_bits'] / 1e6:>9.2f}")

    summary = table.summary()
    print("\nmean objective per policy:")
    for policy, mean in sorted(summary["mean_objective"].items(),
                               key=lambda kv: kv[1]):
        print(f"  {policy:<18} {mean:.4f}")
    print(f"\njoint wins against baselines on matching seeds: "
          f"{summary['joint_win_rate']:.0%}")


if __name__ == "__main__":
    main()
