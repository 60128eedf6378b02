"""``genmeasures`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config, resolve
from .experiment import (HarnessError, cross_eval, generate_data, measure_experiment, run_experiment,
                         write_manifest)
from .report import correlate

log = logging.getLogger("genmeasures")

COMMANDS = ("gen-data", "train-family", "measure", "correlate", "cross-eval", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # the copy attached to subcommands suppresses defaults so that flags given
    # before the subcommand are not overwritten
    def d(value):
        return argparse.SUPPRESS if suppress else value

    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=d(None),
                   help="experiment config (JSON); defaults apply when omitted")
    p.add_argument("--experiment", choices=("E1", "E2", "E3"), default=d(None),
                   help="experiment kind when no config is given")
    p.add_argument("--seed", type=int, default=d(None), help="override base_seed")
    p.add_argument("--out", type=Path, default=d(Path("runs/default")), help="output directory")
    p.add_argument("--jobs", type=int, default=d(1), help="parallel worker processes")
    p.add_argument("--verbose", "-v", action="count", default=d(0))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = _Parser(prog="genmeasures", description="Train model families, compute complexity "
                     "measures and correlate them with generalization.", parents=[_global_flags(False)])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="{" + ",".join(COMMANDS) + "}")
    sub.add_parser("gen-data", parents=[common], help="write the dataset and its shift variants")
    sub.add_parser("train-family", parents=[common], help="train every (depth, run) job, measure, write family.csv")
    sub.add_parser("measure", parents=[common], help="recompute measures for trained jobs")
    c = sub.add_parser("correlate", parents=[common], help="correlation tables from a family table")
    c.add_argument("--family", type=Path, help="family.csv to read (default: <out>/family.csv)")
    sub.add_parser("cross-eval", parents=[common], help="evaluate trained models on shifted datasets")
    r = sub.add_parser("report", parents=[common], help="tables, CDF data, bar chart and error-vs-depth data")
    r.add_argument("--family", type=Path, help="family.csv to read (default: <out>/family.csv)")
    return parser


def _resolve(args):
    overrides = {} if args.seed is None else {"base_seed": args.seed}
    if args.config is not None:
        if args.experiment:
            overrides["experiment"] = args.experiment
        return load_config(args.config, overrides)
    return resolve(overrides, kind=args.experiment or "E1")


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "genmeasures: a subcommand is required\n")
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1\n")
        cfg = _resolve(args)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    except ConfigError as exc:
        sys.stderr.write(f"genmeasures: configuration error: {exc}\n")
        return 1

    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    out: Path = args.out
    try:
        if args.command == "gen-data":
            write_manifest(cfg, out, "gen-data")
            for name, path in generate_data(cfg, out).items():
                print(f"{name}\t{path}")
        elif args.command == "train-family":
            print(run_experiment(cfg, out, jobs=args.jobs))
        elif args.command == "measure":
            print(measure_experiment(cfg, out, jobs=args.jobs))
        elif args.command in ("correlate", "report"):
            family = getattr(args, "family", None) or out / "family.csv"
            if not family.exists():
                raise HarnessError(f"{family} not found; run train-family first")
            write_manifest(cfg, out, args.command, {"family": str(family)})
            reports = correlate(family, out / "report", cfg.g_choices, cfg.robust_config,
                                full=args.command == "report")
            for g in reports:
                print(out / "report" / f"correlation-{g}.csv")
        elif args.command == "cross-eval":
            summary, _ = cross_eval(cfg, out)
            print(summary)
    except (HarnessError, OSError, ValueError) as exc:
        log.debug("failure detail", exc_info=True)
        sys.stderr.write(f"genmeasures {args.command}: {exc}\n")
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()


__all__ = ["build_parser", "main", "run"]
