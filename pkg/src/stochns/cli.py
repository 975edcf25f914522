"""Command-line entry point.

Exit codes: 0 clean completion (including runs that stop early with event
rows), 1 runtime error, 2 configuration rejected, 3 audit or validation
failure, 4 step budget exhausted.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .drivers import EXIT_CONFIG, EXIT_ERROR, drive
from .errors import ConfigError
from .io import EXPERIMENTS, emit_plotdata, load_config, parse_config

VERBS = {
    "run": None,
    "ensemble": "ensemble",
    "uniqueness": "uniqueness",
    "cauchy": "cauchy",
    "continue": "continuation",
    "validate-noise": "validate-noise",
    "fit-constants": "fit-constants",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochns",
        description="Spectral experiments for the cut-off stochastic compressible Navier-Stokes system.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", type=Path, help="key = value configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides the file)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p = sub.add_parser("emit-plots", help="convert a trace or Cauchy table to gnuplot data")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, default=Path("plots"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "emit-plots":
        try:
            for f in emit_plotdata(args.input, args.out):
                print(f)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        return 0
    experiment = VERBS[args.verb]
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
        updates = {}
        if args.seed is not None:
            updates["seed"] = args.seed
        if experiment in EXPERIMENTS:
            updates["experiment"] = experiment
        if updates:
            cfg = cfg.replace(**updates)
        outcome = drive(experiment or cfg["experiment"], cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for line in outcome.summary:
        print(line)
    return outcome.code


if __name__ == "__main__":
    sys.exit(main())
