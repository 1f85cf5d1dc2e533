"""Command line: ``pmelab run|check|compare``."""
from __future__ import annotations

import argparse
import logging
import sys
import time

from .config import CHECKS, ConfigError, load_config, output_dir
from .reports import SchemaError, compare_golden

EXIT_CHECK = 1
EXIT_USAGE = 2


def _check_list(text: str) -> list:
    names = [s.strip() for s in text.split(",") if s.strip()]
    for n in names:
        if n not in CHECKS:
            raise argparse.ArgumentTypeError(f"unknown check {n!r}; known: {', '.join(CHECKS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmelab", description="Porous medium and obstacle problem scenarios.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "solve a scenario, write fields, figures and reports"),
                        ("check", "run only the named checks of a scenario")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="scenario TOML file")
        p.add_argument("--out", help="output directory (default: [output].dir)")
        p.add_argument("--check", type=_check_list, help="comma-separated checks, overriding [checks].run")
        p.add_argument("--refine", type=int, help="number of grid levels for refinement studies")
        p.add_argument("--golden", help="metrics file to compare the run against")
        p.add_argument("--rel-tol", type=float, default=1e-9, help="relative tolerance for --golden")
    p = sub.add_parser("compare", help="compare a metrics file against a golden file")
    p.add_argument("report")
    p.add_argument("--golden", required=True)
    p.add_argument("--rel-tol", type=float, default=1e-9)
    return ap


def _golden(report, golden, rel_tol) -> int:
    try:
        diff = compare_golden(report, golden, rel_tol)
    except (OSError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(diff.text())
    if not diff.ok:
        print(f"check failed: golden ({', '.join(diff.failed)})", file=sys.stderr)
        return EXIT_CHECK
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "compare":
        return _golden(args.report, args.golden, args.rel_tol)

    from .runner import run_scenario

    try:
        cfg = load_config(args.config)
        if args.refine is not None:
            if args.refine < 1:
                raise ConfigError("--refine must be at least 1")
            cfg.params["levels"] = args.refine
        checks = args.check if args.check is not None else cfg.checks
        if args.command == "check" and not checks:
            raise ConfigError("no checks requested")
        out = output_dir(cfg, args.out)
        t0 = time.perf_counter()
        result = run_scenario(cfg, out, checks, solve=args.command == "run")
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write((out / "summary.txt").read_text())
    print(f"wrote {out} in {time.perf_counter() - t0:.2f}s")
    status = 0
    if not result.ok:
        print(f"check failed: {', '.join(result.failed)}", file=sys.stderr)
        status = EXIT_CHECK
    if args.golden:
        g = _golden(out / "metrics.csv", args.golden, args.rel_tol)
        status = status or g
    return status


if __name__ == "__main__":
    sys.exit(main())
