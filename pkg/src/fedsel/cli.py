"""Command line: ``fedsel run`` for one experiment, ``fedsel sweep`` for a grid."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .core import ConfigError, ExperimentConfig
from .experiment import SweepSpec, execute, run_sweep, write_outputs, write_run

EXIT_OK, EXIT_FAILED, EXIT_BAD_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedsel", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single experiment")
    run.add_argument("--config", required=True, help="ExperimentConfig JSON file")
    run.add_argument("--out", help="directory for table.csv, series.jsonl and runs/")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--checkpoint-dir", help="write final model parameters here")

    sweep = sub.add_parser("sweep", help="run a cartesian sweep")
    sweep.add_argument("--spec", required=True, help="SweepSpec JSON file")
    sweep.add_argument("--out", required=True, help="output directory")
    sweep.add_argument("--seed", type=int, action="append",
                       help="replace the seed list (repeatable)")
    sweep.add_argument("--threads", type=int, default=1, help="parallel runs")
    sweep.add_argument("--checkpoint-dir", help="write final model parameters here")
    sweep.add_argument("--resume", action="store_true",
                       help="reuse finished runs found under OUT/runs/")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("FEDSEL_LOG", "WARNING").upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            config = ExperimentConfig.load(args.config)
            if args.seed is not None:
                config = replace(config, seed=args.seed)
        else:
            spec = SweepSpec.load(args.spec)
            if args.seed:
                spec = replace(spec, seeds=tuple(args.seed))
    except (ConfigError, OSError) as exc:
        print(f"fedsel: bad config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG

    if args.command == "run":
        try:
            summary = execute(config, args.checkpoint_dir)
        except Exception as exc:
            print(f"fedsel: run failed: {exc}", file=sys.stderr)
            return EXIT_FAILED
        if args.out:
            write_outputs(args.out, [summary])
            write_run(Path(args.out), summary)
        final = summary.to_dict()["final"]
        print(json.dumps({"fingerprint": summary.fingerprint, **final}, sort_keys=True))
        return EXIT_OK

    summaries, failures = run_sweep(spec, args.out, workers=args.threads,
                                    checkpoint_dir=args.checkpoint_dir, resume=args.resume)
    print(f"{len(summaries)} runs finished, {len(failures)} failed -> {args.out}")
    return EXIT_FAILED if failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
