"""Command line front end.

Verbs: simulate (one run), sweep (axis study), compare (policies side by
side), oracle (reference-implementation gate), export (re-aggregate an
existing sweep).  The config file is TOML; a [sweep] table configures the
sweep verb and is stripped before scenario validation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness, optimizer
from .scenario import load_scenario
from .scenario import generate_tasks

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _read_config(path):
    if path is None:
        return {}, {}
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    sweep = raw.pop("sweep", {})
    return raw, sweep


def _parse_seeds(text):
    return tuple(int(s) for s in text.split(",") if s != "")


def _parse_policies(items):
    if not items:
        return None
    out = []
    for item in items:
        out.extend(p for p in item.split(",") if p)
    return out


def _write_trajectory_csv(path, traj):
    lines = ["uav,slot,x,y,vx,vy,ax,ay"]
    m, n, _ = traj.q.shape
    for mi in range(m):
        for si in range(n):
            row = (mi, si, *traj.q[mi, si], *traj.v[mi, si],
                   *traj.acc[mi, si])
            lines.append(",".join(repr(x) if isinstance(x, float) else str(x)
                                  for x in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_simulate(args):
    raw, _ = _read_config(args.config)
    scenario = load_scenario(raw)
    tasks = generate_tasks(scenario, args.seed)
    sol = optimizer.run_policy(args.policy, scenario, tasks, args.seed)
    print(f"{args.policy} seed={args.seed}: objective "
          f"{sol.metrics.objective:.6f}, iterations {sol.iterations}, "
          f"converged={sol.converged}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(sol.metrics.to_json() + "\n")
        with open(os.path.join(args.out, "metrics.csv"), "w",
                  encoding="utf-8") as fh:
            fh.write(sol.metrics.csv_header() + "\n"
                     + sol.metrics.to_csv_row() + "\n")
        _write_trajectory_csv(os.path.join(args.out, "trajectory.csv"),
                              sol.traj)
    return 0


def cmd_sweep(args):
    raw, sweep_cfg = _read_config(args.config)
    if not sweep_cfg:
        print("config has no [sweep] table", file=sys.stderr)
        return 2
    scenario = load_scenario(raw)
    spec = harness.SweepSpec(
        axis=sweep_cfg["axis"],
        values=tuple(sweep_cfg["values"]),
        seeds=tuple(sweep_cfg.get("seeds", [0])),
        policies=tuple(sweep_cfg.get("policies", optimizer.POLICIES)))
    out = args.out or "sweep_out"

    def progress(rec):
        state = "FAIL" if rec.error else "ok"
        print(f"[{state}] {rec.axis}={rec.value} {rec.policy} "
              f"seed={rec.seed} ({rec.wallclock_ms:.0f} ms)")

    records = harness.run_sweep(scenario, spec, out, resume=args.resume,
                                jobs=args.jobs, progress=progress)
    failures = [r for r in records if r.error]
    print(f"{len(records)} cells, {len(failures)} failures, output in {out}")
    return 1 if failures else 0


def cmd_compare(args):
    raw, _ = _read_config(args.config)
    scenario = load_scenario(raw)
    policies = _parse_policies(args.policy)
    table = optimizer.compare(scenario, policies=policies, seeds=args.seeds)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "comparison.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(table.to_csv())
        print(f"wrote {path}")
    summary = table.summary()
    for policy, mean in summary["mean_objective"].items():
        print(f"{policy}: mean objective {mean:.6f}")
    if summary["joint_win_rate"] is not None:
        print(f"joint win rate: {summary['joint_win_rate']:.3f}")
    return 0


def cmd_oracle(args):
    report = harness.oracle_suite(size_limit=args.size_limit)
    for check in report["checks"]:
        state = "PASS" if check["passed"] else "FAIL"
        print(f"[{state}] {check['name']}: max deviation "
              f"{check['max_deviation']:.3e} {check['detail']}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "oracle_report.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        print(f"wrote {path}")
    return 0 if report["passed"] else 1


def cmd_export(args):
    raw, sweep_cfg = _read_config(args.config)
    if not sweep_cfg:
        print("config has no [sweep] table", file=sys.stderr)
        return 2
    spec = harness.SweepSpec(
        axis=sweep_cfg["axis"],
        values=tuple(sweep_cfg["values"]),
        seeds=tuple(sweep_cfg.get("seeds", [0])),
        policies=tuple(sweep_cfg.get("policies", optimizer.POLICIES)))
    out = args.out or "sweep_out"
    records = harness.load_records(out)
    if not records:
        print(f"no records found in {out}", file=sys.stderr)
        return 2
    paths = harness.emit_plots_data(records, spec, out)
    for metric, path in paths.items():
        print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="uavmec",
        description="Multi-UAV edge computing: offload, allocate, fly.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("simulate", help="run one policy on one seed")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", default="joint",
                   choices=optimizer.POLICIES)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run the [sweep] table of the config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="run several policies side by side")
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", type=_parse_seeds, default=(0,))
    p.add_argument("--policy", action="append", default=None,
                   help="comma list, repeatable; default: all policies")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oracle", help="solver-vs-reference gate")
    p.add_argument("--size-limit", type=int, default=18)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("export", help="re-aggregate an existing sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
