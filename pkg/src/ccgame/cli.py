"""Command-line surface: solve, rollout, mpc, report.

Every command writes its artifacts plus a run manifest into --out.  Exit
codes: 0 success, 1 invalid input or solver failure, 2 completed with
warnings (solve hit max iterations with residuals above tolerance, or some
MPC seed failed).
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, lqnash, simulate
from .dualascent import DualAscentOptions, solve_scenario
from .errors import CCGameError, FingerprintMismatch, ScenarioValidationError
from .model import (assemble_problem, file_fingerprint, load_scenario,
                    validate_scenario)

TRACE_HEADER = ["iter", "max_violation", "complementarity", "dual_value_p1", "eta"]


def _utc_now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


@dataclass
class RunManifest:
    """Provenance record; exactly one per artifact directory."""

    command: str
    options: dict
    scenario_path: str
    scenario_sha256: str
    outputs: list
    created_utc: str = field(default_factory=_utc_now)
    tool: str = "ccgame"
    version: str = __version__
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        doc = asdict(self)
        doc.update(doc.pop("extra"))
        return doc


def write_manifest(outdir, command, options, scenario_path, scenario_hash, outputs,
                   extra=None):
    manifest = RunManifest(command=command, options=options,
                           scenario_path=str(scenario_path),
                           scenario_sha256=scenario_hash, outputs=outputs,
                           extra=extra or {})
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=1)
        fh.write("\n")
    return path


def _print_errors(exc):
    if isinstance(exc, ScenarioValidationError):
        for v in exc.violations:
            print(f"error: {type(v).__name__}: {v}", file=sys.stderr)
    else:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)


def _eta(value):
    return value if value == "auto" else float(value)


def cmd_solve(args):
    outdir = args.out or "runs/solve"
    os.makedirs(outdir, exist_ok=True)
    scenario = load_scenario(args.scenario)
    vs = validate_scenario(scenario)
    scenario_hash = file_fingerprint(args.scenario)
    options = DualAscentOptions(k_max=args.iters, eta=_eta(args.eta))

    trace_rows = []
    writer = trace_rows.append if args.trace else None
    t0 = time.perf_counter()
    prepared, report = solve_scenario(vs, options, relinearize=args.relinearize,
                                      trace_writer=writer)
    wall = time.perf_counter() - t0

    policy_doc = lqnash.policy_to_dict(report.policy, scenario_hash)
    policy_doc["nominal_inputs"] = np.transpose(
        prepared.problem.nominal_inputs, (1, 0, 2)).tolist()
    policy_path = os.path.join(outdir, "policy.json")
    with open(policy_path, "w", encoding="utf-8") as fh:
        json.dump(policy_doc, fh)
        fh.write("\n")

    report_doc = report.to_dict()
    report_doc["wall_seconds"] = wall
    report_path = os.path.join(outdir, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report_doc, fh, indent=1)
        fh.write("\n")

    outputs = ["policy.json", "report.json"]
    if args.trace:
        trace_path = os.path.join(outdir, "trace.csv")
        with open(trace_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRACE_HEADER)
            w.writeheader()
            w.writerows(trace_rows)
        outputs.append("trace.csv")

    write_manifest(outdir, "solve",
                   {"iters": args.iters, "eta": args.eta,
                    "relinearize": args.relinearize, "trace": args.trace},
                   args.scenario, scenario_hash, outputs,
                   extra={"solve_seconds": wall})
    print(f"solved: {report.iterations} iteration(s), "
          f"feasibility residual {report.feasibility_residual:.3e}, "
          f"complementarity {report.complementarity:.3e}, "
          f"eta {report.eta:.3e}, L {report.lipschitz:.3e}")
    ok = (report.feasibility_residual <= options.tol_feas
          and report.complementarity <= options.tol_slack)
    return 0 if ok else 2


def _load_policy(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    policy, fingerprint = lqnash.policy_from_dict(doc)
    nominal = doc.get("nominal_inputs")
    nominal = None if nominal is None else np.asarray(nominal, dtype=float)
    return policy, fingerprint, nominal


def cmd_rollout(args):
    outdir = args.out or "runs/rollout"
    os.makedirs(outdir, exist_ok=True)
    policy, fingerprint, nominal = _load_policy(args.policy)
    scenario_hash = file_fingerprint(args.scenario)
    if fingerprint != scenario_hash:
        raise FingerprintMismatch(fingerprint, scenario_hash)
    vs = validate_scenario(load_scenario(args.scenario))
    problem = assemble_problem(vs, nominal_inputs=nominal)

    batch = simulate.rollout(problem, policy, args.seed, args.samples)
    stats = simulate.evaluate_safety(batch, problem)
    stats_path = os.path.join(outdir, "stats.csv")
    simulate.write_stats_csv(stats_path, [stats])
    outputs = ["stats.csv"]
    if args.dump_trajectories:
        simulate.dump_trajectories(os.path.join(outdir, "trajectories"), batch, problem)
        outputs.append("trajectories/")
    write_manifest(outdir, "rollout",
                   {"samples": args.samples, "seed": args.seed,
                    "policy": args.policy},
                   args.scenario, scenario_hash, outputs)
    print(f"rollout: {stats.samples} samples, violation rate {stats.rate:.4f} "
          f"(wilson [{stats.wilson_lo:.4f}, {stats.wilson_hi:.4f}]), "
          f"mean cost {stats.cost_mean:.3f}")
    return 0


def cmd_mpc(args):
    outdir = args.out or "runs/mpc"
    os.makedirs(outdir, exist_ok=True)
    scenario_hash = file_fingerprint(args.scenario)
    vs = validate_scenario(load_scenario(args.scenario))
    problem = assemble_problem(vs)
    options = DualAscentOptions(k_max=args.iters, eta=_eta(args.eta))
    batch, failures, sec_per_step = simulate.central_mpc(
        problem, args.seed, args.samples, replan_every=args.replan_every,
        options=options)
    stats = simulate.evaluate_safety(batch, problem)
    stats_path = os.path.join(outdir, "stats.csv")
    simulate.write_stats_csv(stats_path, [stats])
    write_manifest(outdir, "mpc",
                   {"samples": args.samples, "seed": args.seed,
                    "replan_every": args.replan_every, "iters": args.iters},
                   args.scenario, scenario_hash, ["stats.csv"],
                   extra={"comp_seconds_per_step": sec_per_step,
                          "failures": [{"sample": s, "step": t, "error": m}
                                       for s, t, m in failures]})
    print(f"central mpc: {stats.samples} seeds, violation rate {stats.rate:.4f}, "
          f"mean cost {stats.cost_mean:.3f}, {sec_per_step:.3f} s/replan, "
          f"{len(failures)} failure(s)")
    return 2 if failures else 0


def _read_stats(path):
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != simulate.STATS_HEADER:
            raise CCGameError(
                f"{path}: schema mismatch, header {reader.fieldnames}")
        return list(reader)


def _comp_time_for(path):
    manifest = os.path.join(os.path.dirname(os.path.abspath(path)), "manifest.json")
    if not os.path.exists(manifest):
        return ""
    with open(manifest, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "comp_seconds_per_step" in doc:
        return f"{doc['comp_seconds_per_step']:.3f} s / step"
    if "solve_seconds" in doc:
        return f"{doc['solve_seconds']:.3f} s"
    return ""


def cmd_report(args):
    rows = []
    for path in args.stats:
        for row in _read_stats(path):
            row["comp_t"] = _comp_time_for(path)
            rows.append(row)
    if not rows:
        raise CCGameError("no stats rows to report")
    headers = ["Method", "Cost", "Travel T", "Comp. T", "Col. rate"]
    table = [[r["method"],
              f"{float(r['cost_mean']):.1f}",
              f"{float(r['travel_mean_s']):.1f} s",
              r["comp_t"],
              f"{100 * float(r['collision_rate']):.1f}%"] for r in rows]
    widths = [max(len(h), *(len(t[c]) for t in table)) for c, h in enumerate(headers)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for t in table:
        print("  ".join(v.ljust(w) for v, w in zip(t, widths)))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        merged = os.path.join(args.out, "report.csv")
        with open(merged, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=simulate.STATS_HEADER + ["comp_t"])
            w.writeheader()
            w.writerows(rows)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ccgame",
                                description="Chance-constrained LQG game solver")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="compute the feedback GNE policy")
    s.add_argument("--scenario", required=True)
    s.add_argument("--iters", type=int, default=2000)
    s.add_argument("--eta", default="auto")
    s.add_argument("--relinearize", type=int, default=0,
                   help="outer relinearization rounds (unicycle scenarios)")
    s.add_argument("--trace", action="store_true")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("rollout", help="seeded Monte Carlo rollouts of a policy")
    r.add_argument("--scenario", required=True)
    r.add_argument("--policy", required=True)
    r.add_argument("--samples", type=int, default=100)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--dump-trajectories", action="store_true")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_rollout)

    m = sub.add_parser("mpc", help="central-MPC baseline over seeded episodes")
    m.add_argument("--scenario", required=True)
    m.add_argument("--samples", type=int, default=100)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--replan-every", type=int, default=1)
    m.add_argument("--iters", type=int, default=500)
    m.add_argument("--eta", default="auto")
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_mpc)

    c = sub.add_parser("report", help="merge stats files into a comparison table")
    c.add_argument("stats", nargs="+")
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CCGameError as exc:
        _print_errors(exc)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
