"""A small task-size sweep with persistence, resume, and plot-ready CSVs.

Run from the repository root:  python3 demos/sweep_study.py
Outputs land in demo_sweep_out/.
"""

from uavmec.harness import SweepSpec, run_sweep
from uavmec.scenario import load_scenario


def main():
    scenario = load_scenario({
        "time": {"horizon_s": 20.0, "n_slots": 10},
        "users": {"count": 2, "positions_m": [[800.0, 1200.0],
                                              [2000.0, 1000.0]]},
        "uavs": {"count": 2, "a_max_mps2": 20.0},
    })
    spec = SweepSpec(axis="task_size",
                     values=(0.5e6, 1.5e6, 3.0e6),
                     seeds=(0, 1, 2),
                     policies=("joint", "nearest_offload", "fixed_circular"))
    out = "demo_sweep_out"

    def progress(rec):
        state = "FAIL" if rec.error else "ok"
        print(f"  [{state}] {rec.axis}={rec.value:.2e} {rec.policy} "
              f"seed={rec.seed} objective={rec.objective:.4f}")

    print(f"running {len(spec.values) * len(spec.seeds) * len(spec.policies)}"
          f" cells into {out}/ ...")
    records = run_sweep(scenario, spec, out, progress=progress)

    print("\nmean objective by task size:")
    for value in spec.values:
        row = []
        for policy in spec.policies:
            vals = [r.objective for r in records
                    if r.policy == policy and r.value == value]
            row.append(f"{policy}={sum(vals) / len(vals):.4f}")
        print(f"  {value / 1e6:.1f} Mbit: " + "  ".join(row))

    print(f"\nraw records: {out}/records.ndjson")
    print(f"aggregates:  {out}/task_size_<metric>.csv")
    print("rerun with resume=True (or the CLI --resume flag) and finished")
    print("cells are skipped; aggregates are byte-stable across reruns.")


if __name__ == "__main__":
    main()
