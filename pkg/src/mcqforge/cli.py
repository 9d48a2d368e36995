"""Command-line entry point: one subcommand per pipeline stage, plus
`run` (all stages) and `resume`."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigInvalid, CorruptManifest, MCQForgeError
from .pipeline import STAGES, RunConfig, resume, run_all, run_stage

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcqforge",
        description="MCQA benchmark pipeline: ingest a corpus, synthesize "
                    "questions and reasoning traces, evaluate answer models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--run-dir", default="run",
                       help="artifact directory (default: ./run)")
        p.add_argument("--dry-run", action="store_true",
                       help="print the stage plan without executing")
        p.add_argument("--force", action="store_true",
                       help="re-run even when the manifest says fresh")

    for stage in STAGES:
        add_common(sub.add_parser(stage.name, help=f"run the {stage.name} stage"))
    add_common(sub.add_parser("run", help="run every stage in order"))
    add_common(sub.add_parser("resume", help="run from the first stale stage"))
    return parser


def _print_plan(names) -> None:
    for name in names:
        print(f"plan: {name}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
    except ConfigInvalid as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            if args.dry_run:
                _print_plan(s.name for s in STAGES)
                return EXIT_OK
            for entry in run_all(cfg, args.run_dir, force=args.force):
                _report(entry)
        elif args.command == "resume":
            pending = resume(args.run_dir, cfg)
            if pending is None:
                print("nothing to do: run is complete")
                return EXIT_OK
            names = [s.name for s in STAGES]
            plan = names[names.index(pending):]
            if args.dry_run:
                _print_plan(plan)
                return EXIT_OK
            for name in plan:
                _report(run_stage(name, cfg, args.run_dir))
        else:
            if args.dry_run:
                _print_plan([args.command])
                return EXIT_OK
            _report(run_stage(args.command, cfg, args.run_dir,
                              force=args.force))
    except ConfigInvalid as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (MCQForgeError, CorruptManifest) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def _report(entry: dict) -> None:
    status = "cached" if entry.get("cache_hit") else "done"
    print(f"{entry['stage']}: {status} counts={json.dumps(entry['counts'])}")


if __name__ == "__main__":
    sys.exit(main())
