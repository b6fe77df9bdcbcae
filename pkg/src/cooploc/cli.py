"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical or protocol failure.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import harness
from .netsim import ConnectivityError
from .numerics import NumericsError
from .scenario import DCL_FILTERS, FILTERS, ScenarioError, dumps, resolve, validate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3

EQUIVALENCE_COLUMNS = ("filter", "max_state_delta", "max_cov_delta", "tolerance", "ok")

GNUPLOT_TEMPLATE = """\
# gnuplot script; run from this directory: gnuplot plot_rmse.gp
set datafile separator ','
set terminal pngcairo size 900,{height}
set output 'rmse.png'
set multiplot layout {n},1
{panels}
unset multiplot
"""


class _ConfigError(Exception):
    pass


def _parse_filters(text: str | None, default) -> list[str]:
    if not text:
        return list(default)
    out = [f.strip() for f in text.split(",") if f.strip()]
    bad = [f for f in out if f not in FILTERS]
    if bad:
        raise _ConfigError(f"unknown filter(s) {', '.join(bad)}; choose from {', '.join(FILTERS)}")
    return out


def _write_gnuplot(out_dir: str, uids, filters) -> None:
    panels = []
    for u in uids:
        plots = ", ".join(
            f"'< grep \",{u},{f},\" rmse.csv' using 2:5 with lines title '{f}'" for f in filters)
        panels.append(f"set title 'agent {u} position RMSE'\nset xlabel 't [s]'\nset ylabel 'RMSE [m]'\nplot {plots}")
    text = GNUPLOT_TEMPLATE.format(height=300 * len(uids), n=len(uids), panels="\n".join(panels))
    with open(os.path.join(out_dir, "plot_rmse.gp"), "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_run(args) -> int:
    try:
        spec = resolve(args.scenario)
        filters = _parse_filters(args.filters, spec.filters)
    except (ScenarioError, _ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    spec = spec.with_filters(filters)
    problems = validate(spec)
    if problems:
        print("invalid scenario:", file=sys.stderr)
        for p in problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_CONFIG
    if args.check_equivalence and ("central" not in filters or not any(f in DCL_FILTERS for f in filters)):
        print("error: --check-equivalence needs 'central' and at least one imdcl filter", file=sys.stderr)
        return EXIT_CONFIG
    runs = spec.runs if args.runs is None else args.runs
    if runs < 1:
        print("error: --runs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    seed = spec.seed if args.seed is None else args.seed

    try:
        report = harness.monte_carlo(spec, filters, runs, seed, keep_first=True)
    except (harness.SimulationError, ConnectivityError, NumericsError,
            np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    out = args.out
    os.makedirs(out, exist_ok=True)
    rec = report.first
    harness.write_runrecord_csv(rec, os.path.join(out, "runrecord.csv"))
    harness.write_rmse_csv(report, os.path.join(out, "rmse.csv"))
    harness.write_nees_csv(report, os.path.join(out, "nees.csv"))
    harness.write_bytes_csv(rec, os.path.join(out, "bytes.csv"))
    with open(os.path.join(out, "scenario.yaml"), "w", encoding="utf-8") as fh:
        fh.write(dumps(spec))
    if args.gnuplot:
        _write_gnuplot(out, spec.uids, filters)

    print(f"scenario {spec.name}: {runs} run(s), seed {seed}, filters {','.join(filters)} -> {out}")
    for f in filters:
        final = report.rmse_pos[f][-1]
        print(f"  {f:13s} final position RMSE " + " ".join(f"{u}:{v:.3f}" for u, v in zip(spec.uids, final)))

    status = EXIT_OK
    if args.check_equivalence:
        deltas = harness.max_oracle_delta(rec)
        with open(os.path.join(out, "equivalence.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EQUIVALENCE_COLUMNS)
            for f, (dx, dp) in sorted(deltas.items()):
                ok = dx <= args.tolerance and dp <= args.tolerance
                w.writerow((f, repr(dx), repr(dp), repr(args.tolerance), int(ok)))
                print(f"  equivalence {f}: state {dx:.3e}, covariance {dp:.3e} ({'ok' if ok else 'FAILED'})")
                if not ok:
                    status = EXIT_FAILURE
    return status


def cmd_scaling(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",")]
    except ValueError:
        print(f"error: bad --sizes {args.sizes!r}", file=sys.stderr)
        return EXIT_CONFIG
    if len(sizes) < 2 or min(sizes) < 2:
        print("error: --sizes needs at least two team sizes >= 2", file=sys.stderr)
        return EXIT_CONFIG
    rows = harness.scaling_study(sizes, args.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "scaling.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=harness.SCALING_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    upd = harness.scaling_slopes(rows, "update_bytes")
    lm = harness.scaling_slopes(rows, "landmark_bytes")
    with open(os.path.join(args.out, "scaling_fit.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("variant", "update_bytes_per_agent", "landmark_bytes_per_agent"))
        for v in sorted(upd):
            w.writerow((v, repr(upd[v]), repr(lm[v])))
    print(f"{'N':>4} {'variant':>7} {'landmark B':>10} {'update B':>9} {'registry':>8}")
    for r in rows:
        print(f"{r['n_agents']:>4} {r['variant']:>7} {r['landmark_bytes']:>10} {r['update_bytes']:>9} "
              f"{r['registry_entries']:>8}")
    for v in sorted(upd):
        print(f"slope {v}: update {upd[v]:.2f} B/agent, landmark {lm[v]:.2f} B/agent")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cooploc", description="Cooperative localization simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write CSV results")
    r.add_argument("--scenario", required=True, help="preset name (paper3, fig2, fig7) or scenario file")
    r.add_argument("--filters", help=f"comma-separated subset of {','.join(FILTERS)}")
    r.add_argument("--runs", type=int, help="Monte Carlo runs (default: scenario value)")
    r.add_argument("--seed", type=int, help="base seed (default: scenario value)")
    r.add_argument("--out", default="out", help="output directory")
    r.add_argument("--check-equivalence", action="store_true",
                   help="compare IM-D-CL against the centralized EKF; exit 3 if above tolerance")
    r.add_argument("--tolerance", type=float, default=1e-9, help="relative tolerance for --check-equivalence")
    r.add_argument("--gnuplot", action="store_true", help="also write plot_rmse.gp")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("scaling", help="message size and registry size versus team size")
    s.add_argument("--sizes", default="3,6,12,24")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="out")
    s.set_defaults(func=cmd_scaling)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
