#!/usr/bin/env python3
"""Command-line runner: solve, validate and oracle."""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from app_state import configure_logging, load_settings
from core.artifacts import dumps
from core.errors import ConfigError, InclusionError
from core.oracles import ORACLES, oracle_values
from core.runner import RunArtifacts, default_out_dir, run
from core.scenarios import Scenario, resolve_scenario

logger = logging.getLogger(__name__)


def _summary(art: RunArtifacts, scn: Scenario) -> dict:
    return {
        "scenario": scn.name,
        "workflow": scn.workflow,
        "status": art.status,
        "exit_code": art.exit_code,
        "out_dir": str(art.out_dir),
        "files": sorted(art.files),
    }


def _out_dirs(scenarios: list[Scenario], out: Optional[Path]) -> list[Path]:
    if len(scenarios) == 1:
        return [out if out is not None else default_out_dir(scenarios[0])]
    root = out if out is not None else load_settings().output_root
    dirs = [root / scn.name for scn in scenarios]
    if len(set(dirs)) != len(dirs):
        raise ConfigError("batch scenarios must have distinct names so their output directories differ", field="name")
    return dirs


def cmd_solve(args: argparse.Namespace) -> int:
    try:
        scenarios = [resolve_scenario(ref) for ref in args.config]
        dirs = _out_dirs(scenarios, args.out)
    except InclusionError as exc:
        print(dumps(exc.to_dict()), file=sys.stderr, end="")
        return 2

    if len(scenarios) > 1 and args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(lambda pair: run(pair[0], pair[1]), zip(scenarios, dirs)))
    else:
        jobs = args.jobs if len(scenarios) == 1 else 1
        results = [run(scn, d, jobs=jobs) for scn, d in zip(scenarios, dirs)]

    summaries = [_summary(art, scn) for art, scn in zip(results, scenarios)]
    print(dumps(summaries[0] if len(summaries) == 1 else summaries), end="")
    return max(art.exit_code for art in results)


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        scn = resolve_scenario(args.config)
    except InclusionError as exc:
        print(dumps(exc.to_dict()), file=sys.stderr, end="")
        return 2
    print(dumps({"status": "valid", "config": scn.effective_config()}), end="")
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    try:
        values = oracle_values(args.name)
    except InclusionError as exc:
        print(dumps(exc.to_dict()), file=sys.stderr, end="")
        return 2
    print(dumps({"oracle": args.name, **values}), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pilab", description="Periodic evolution inclusion solver")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="Run one or more scenarios and write artifacts")
    solve.add_argument("config", nargs="+", help="Scenario file or builtin:<name>")
    solve.add_argument("--out", type=Path, default=None, help="Output directory (batch: parent directory)")
    solve.add_argument("--jobs", type=int, default=1, help="Worker threads")
    solve.add_argument("--verbose", action="store_true", help="Debug logging")
    solve.set_defaults(func=cmd_solve)

    validate = sub.add_parser("validate", help="Parse and validate a scenario, print the effective config")
    validate.add_argument("config", help="Scenario file or builtin:<name>")
    validate.add_argument("--verbose", action="store_true", help="Debug logging")
    validate.set_defaults(func=cmd_validate)

    oracle = sub.add_parser("oracle", help="Print closed-form reference values")
    oracle.add_argument("name", choices=sorted(ORACLES))
    oracle.add_argument("--verbose", action="store_true", help="Debug logging")
    oracle.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return 2
    configure_logging(args.verbose)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
