"""``uwbench``: run scenarios, compare stack and direct use, summarize results."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .metrics import InsufficientData, LinkMeasurement, TxRxLog
from .scenario import (SUMMARY_COLUMNS, Scenario, ScenarioError, bundled_scenarios,
                       compare_direct, load_results, run_scenario)


def _print_measurement(label: str, m: LinkMeasurement):
    print(f"{label:<28} R_RX {m.r_rx:10.1f} bit/s (sd {m.r_rx_std:.1f})   "
          f"P_dd {m.p_dd:7.3f} s (sd {m.p_dd_std:.3f})   per image {m.p_dd_image:8.2f} s   "
          f"packets {m.n_packets}  lost {m.lost}  runs {m.n_runs}")


def cmd_run(args) -> int:
    scn = Scenario.load(args.scenario)
    res = run_scenario(scn, runs=args.runs, out_dir=args.out)
    _print_measurement(f"{scn.name} [stack]", res.measurement)
    if res.streams_ok < res.measurement.n_runs:
        print(f"warning: {res.measurement.n_runs - res.streams_ok} transfer(s) not received intact")
    return 0


def cmd_compare(args) -> int:
    scn = Scenario.load(args.scenario)
    cmp = compare_direct(scn, runs=args.runs, out_dir=args.out)
    _print_measurement(f"{scn.name} [stack]", cmp.stack.measurement)
    _print_measurement(f"{scn.name} [{cmp.direct.mode}]", cmp.direct.measurement)
    print(f"stack/direct R_RX ratio: {cmp.ratio:.3f}")
    return 0


def cmd_report(args) -> int:
    """Recompute every measurement from the JSONL logs in a results directory."""
    out = Path(args.dir)
    rows = []
    for path in sorted(out.glob("*.jsonl")):
        if path.name.endswith(".partial.jsonl"):
            continue
        scenario, _, mode = path.stem.rpartition("_")
        try:
            m = LinkMeasurement.from_log(TxRxLog.read_jsonl(path))
        except InsufficientData as exc:
            print(f"{path.name}: {exc}", file=sys.stderr)
            continue
        rows.append({"scenario": scenario, "mode": mode, "r_rx_bps": round(m.r_rx, 3),
                     "p_dd_s": round(m.p_dd, 4), "loss": round(m.loss, 4), "runs": m.n_runs})
        _print_measurement(f"{scenario} [{mode}]", m)
    if not rows:
        try:
            rows = load_results(out)
        except ScenarioError as exc:
            print(f"uwbench: {exc}", file=sys.stderr)
            return 1
    target = Path(args.csv) if args.csv else out / "report.csv"
    with open(target, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {target}")
    return 0


def cmd_list(args) -> int:
    for path in bundled_scenarios():
        print(path.stem)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uwbench", description="Benchmark scenarios.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="transfer the scenario payload through the stack")
    p.add_argument("scenario", help="scenario file or bundled scenario name")
    p.add_argument("--runs", type=int, help="override the scenario's run count")
    p.add_argument("--out", default="results", help="directory for logs and summary.csv")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("compare", help="stack versus direct modem use")
    p.add_argument("scenario")
    p.add_argument("--runs", type=int)
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("report", help="summarize a results directory as CSV")
    p.add_argument("dir")
    p.add_argument("--csv", help="output path (default DIR/report.csv)")
    p.set_defaults(func=cmd_report)
    p = sub.add_parser("list", help="list bundled scenarios")
    p.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, InsufficientData) as exc:
        print(f"uwbench: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
