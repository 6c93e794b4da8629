"""Command line entry point.

``mesohom [run] --config PATH [--output DIR] [--seed N] [--scenario NAME] [--quiet]``
runs a scenario; ``--compare REF.csv`` checks the result against a reference.
``mesohom compare RUN_DIR REF.csv`` compares an existing run.

Exit status: 0 success, 1 run or input error, 2 comparison failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import MesohomError
from .runner import compare, run

EXIT_OK, EXIT_ERROR, EXIT_COMPARE = 0, 1, 2


def _tolerances(items: list[str] | None, default: float | None) -> dict:
    out: dict = {}
    if default is not None:
        out["default"] = default
    for item in items or []:
        name, sep, val = item.rpartition("=")
        if not sep or not name:
            raise MesohomError(f"--tol-col expects COLUMN=VALUE, got {item!r}")
        out[name] = float(val)
    return out


def _add_compare_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=float, default=None, help="default relative tolerance (1e-9)")
    p.add_argument("--tol-col", action="append", metavar="COLUMN=VALUE", help="per-column tolerance")
    p.add_argument("--target", default=None, help="run file to compare (default: same name, then bins_exact.csv)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mesohom", description="Discrete mesoscale model runs with homogenization.")
    p.add_argument("--config", metavar="PATH", help="flat key = value config file")
    p.add_argument("--output", metavar="DIR", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, metavar="N", help="random seed (overrides config)")
    p.add_argument("--scenario", metavar="NAME", help="scenario name (overrides config)")
    p.add_argument("--quiet", action="store_true", help="only report errors")
    p.add_argument("--compare", metavar="REF_CSV", help="compare the run against a reference CSV")
    _add_compare_opts(p)
    return p


def build_compare_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mesohom compare", description="Compare a run directory against a reference CSV.")
    p.add_argument("run_dir")
    p.add_argument("reference")
    p.add_argument("--quiet", action="store_true")
    _add_compare_opts(p)
    return p


def _report(rep, quiet: bool) -> int:
    if not quiet or not rep.passed:
        for line in rep.lines():
            print(line)
    return EXIT_OK if rep.passed else EXIT_COMPARE


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    mode = "run"
    if argv and argv[0] in ("run", "compare"):
        mode = argv.pop(0)
    parser = build_compare_parser() if mode == "compare" else build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        tols = _tolerances(args.tol_col, args.tol)
        if mode == "compare":
            return _report(compare(args.run_dir, args.reference, tols, args.target), args.quiet)
        cfg = load_config(args.config, {"seed": args.seed, "scenario": args.scenario, "output_dir": args.output})
        result = run(cfg)
        if not args.quiet:
            for k, v in sorted(result.metrics.items()):
                print(f"{k} = {v}")
            print(f"outputs in {result.run_dir}")
        if args.compare:
            return _report(compare(result.run_dir, args.compare, tols, args.target), args.quiet)
        return EXIT_OK
    except (MesohomError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
