"""Command-line front end: ``agepop {project,verify,convergence,compare}``.

Exit codes: 0 success, 1 input or usage error, 2 numerical failure,
3 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import dataio, pipeline, verification
from .analysis import error_norms
from .core import SexPair
from .errors import AgepopError, FactorizationFailed, StabilityWarning
from .scheme import assemble_operators, format_step

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fraction(text: str) -> float:
    try:
        return dataio._parse_fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="agepop", description="Two-sex age-structured population projections.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("project", help="run a projection from a scenario config")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
    p.add_argument("--theta", type=_fraction)
    p.add_argument("--tau", type=_fraction)
    p.add_argument("--h", type=_fraction)

    p = sub.add_parser("verify", help="run the property suites")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("convergence", help="self-convergence study on a smooth scenario")
    p.add_argument("--levels", type=int, required=True, help="number of successive differences (>= 2)")
    p.add_argument("--theta", type=_fraction, default=1.0)
    p.add_argument("--time-only", action="store_true", help="refine tau only on a fixed fine age grid")
    p.add_argument("--fine-n", type=int, default=512, help="age cells for --time-only")

    p = sub.add_parser("compare", help="error norms between two population files")
    p.add_argument("--simulated", required=True, type=Path)
    p.add_argument("--reported", required=True, type=Path)
    return parser


def _project(args) -> int:
    cfg = dataio.load_config(args.config)
    cfg = cfg.replace(out_dir=args.out, theta=args.theta, tau=args.tau, h=args.h)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", StabilityWarning)
        scenario, _, output = pipeline.run(cfg)
    config = scenario.config
    print(f"omega0 = {config.omega0:.6g}")
    bar = config.tau_bar
    print(f"tau_bar = {format_step(bar) if bar is not None else 'n/a (theta < 1/2)'}")
    print(f"tau = {format_step(config.tau)}  h = {format_step(cfg.h)}  theta = {config.theta:g}")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    files = dataio.export_results(output, cfg.out_dir)
    print(f"wrote {len(files)} files to {cfg.out_dir}")
    for year, pop in zip(output.years, output.populations):
        print(f"{year:>6} {pop.male.total() + pop.female.total():16.2f}")
    return EXIT_OK


def _verify(args, assemble) -> int:
    results = verification.run_all(args.seed, assemble=assemble)
    print(f"{'suite':<20} {'cases':>6} {'worst':>12} {'seconds':>8}  result")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        extra = f"  ({r.detail})" if r.detail else ""
        print(f"{r.name:<20} {r.cases:>6} {r.worst:12.4e} {r.seconds:8.2f}  {status}{extra}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def _convergence(args) -> int:
    if args.levels < 2:
        raise UsageError("convergence: --levels must be at least 2")
    mode = "time" if args.time_only else "joint"
    table = verification.convergence_study(args.levels, args.theta, mode, fine_n=args.fine_n)
    print(table.format())
    return EXIT_OK


def _compare(args) -> int:
    sim = dataio.load_population(args.simulated)
    rep = dataio.load_population(args.reported)
    for sex in ("m", "f"):
        if not np.array_equal(sim[sex].ages, rep[sex].ages):
            raise UsageError(
                f"compare: ages differ for sex {sex!r} "
                f"({sim[sex].max_age + 1} simulated vs {rep[sex].max_age + 1} reported)"
            )
    report = error_norms(SexPair(sim.male, sim.female), SexPair(rep.male, rep.female))
    names = {"m": "male", "f": "female"}
    print("Totals")
    print(f"{'sex':<8} {'reported':>16} {'simulated':>16} {'rel. error':>11}")
    for sex in ("m", "f"):
        e = report[sex]
        print(f"{names[sex]:<8} {e.total_reported:16.2f} {e.total_simulated:16.2f} {100 * e.rel_total:10.4f}%")
    print()
    print("Errors")
    print(
        f"{'sex':<8} {'L1':>14} {'L2':>14} {'Linf':>14} {'rel L1':>10} {'rel L2':>10} {'rel Linf':>10}"
    )
    for sex in ("m", "f"):
        e = report[sex]
        print(
            f"{names[sex]:<8} {e.l1:14.6g} {e.l2:14.6g} {e.linf:14.6g} "
            f"{100 * e.rel_l1:9.4f}% {100 * e.rel_l2:9.4f}% {100 * e.rel_linf:9.4f}%"
        )
    return EXIT_OK


def main(argv=None, assemble=assemble_operators) -> int:
    """Entry point; ``assemble`` lets tests inject a faulty operator assembly."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.command == "project":
            return _project(args)
        if args.command == "verify":
            return _verify(args, assemble)
        if args.command == "convergence":
            return _convergence(args)
        return _compare(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except FactorizationFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (AgepopError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
