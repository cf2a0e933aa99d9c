"""Command-line front end for scenario runs and the verification suite.

Verbs:

    indexpairing run --scenario <path-or-builtin> --out <dir> [--tol X] [--seed N]
    indexpairing suite --which invariants|scenarios|all --out <dir> [--only NAME ..]
    indexpairing list

Exit codes: 0 success, 1 failed comparison or stage error, 2 corrupted
operator cache.  The worker count for suite scenario runs comes from the
INDEXPAIRING_WORKERS environment variable (default 1).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .grids import ModelError
from .harness import (
    BUILTIN_SCENARIOS,
    CorruptedCacheError,
    CSV_HEADER,
    ScenarioError,
    StageError,
    WORKERS_ENV,
    load_scenario,
    run_scenario,
    run_suite,
)


def _cmd_run(args) -> int:
    scn = load_scenario(args.scenario)
    if args.tol is not None:
        tols = dict(scn.tolerances, pairing_tol=float(args.tol))
        scn = dataclasses.replace(scn, tolerances=tols)
    if args.seed is not None:
        scn = dataclasses.replace(scn, seed=int(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record = run_scenario(scn, out_dir=out)
    (out / "scenarios.csv").write_text(CSV_HEADER + "\n" + record.csv_row() + "\n")
    (out / f"{record.scenario}.scenario.json").write_text(
        json.dumps(record.echo, indent=2, sort_keys=True) + "\n"
    )
    print(
        f"{record.scenario}: analytic {list(record.analytic)}  "
        f"pairing {record.pairing:.9g}  topological {record.topological:.9g}  "
        f"err {record.abs_err:.3e}  {record.status}  ({record.wall_time:.1f}s)"
    )
    return 0 if record.status == "pass" else 1


def _cmd_suite(args) -> int:
    only = set(args.only) if args.only else None
    if only:
        unknown = only - set(BUILTIN_SCENARIOS)
        if unknown:
            raise ScenarioError(f"unknown scenario names: {sorted(unknown)}")
    code = run_suite(args.which, args.out, only=only)
    summary = Path(args.out) / "summary.txt"
    sys.stdout.write(summary.read_text())
    return code


def _cmd_list(_args) -> int:
    for name, entry in BUILTIN_SCENARIOS.items():
        print(f"{name:28s} {entry['blurb']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="indexpairing",
        description="Numerical workbench comparing spectral indices of "
        "invariant elliptic families with cocycle pairings and "
        "characteristic-class integrals.",
        epilog=f"Scenario workers are set by the {WORKERS_ENV} environment "
        "variable (default 1).",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="execute one scenario and report")
    p_run.add_argument(
        "--scenario", required=True, help="path to a scenario file or a builtin name"
    )
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument(
        "--tol", type=float, default=None, help="override the pairing tolerance"
    )
    p_run.add_argument(
        "--seed", type=int, default=None, help="override the scenario seed"
    )
    p_run.set_defaults(fn=_cmd_run)

    p_suite = sub.add_parser("suite", help="run invariant checks and/or scenarios")
    p_suite.add_argument(
        "--which",
        required=True,
        choices=("invariants", "scenarios", "all"),
        help="what to run",
    )
    p_suite.add_argument("--out", required=True, help="output directory")
    p_suite.add_argument(
        "--only",
        nargs="*",
        default=None,
        help="restrict scenario runs to these builtin names",
    )
    p_suite.set_defaults(fn=_cmd_suite)

    p_list = sub.add_parser("list", help="list builtin scenarios")
    p_list.set_defaults(fn=_cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CorruptedCacheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc.cause, CorruptedCacheError) else 1
    except (ScenarioError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
