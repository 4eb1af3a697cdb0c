"""Command line entry point: ``run``, ``verify``, ``plotdata`` and ``oracle``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiment import emit_plot_data, run_experiment, run_oracle, verify_manifest
from .scene import ExperimentConfig


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="atwflow", description="Grid minimizing movements for multiphase curvature flow")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run chains, verifiers and write a manifest")
    r.add_argument("config")
    r.add_argument("--out", help="explicit run directory (default: timestamped under the output root)")

    v = sub.add_parser("verify", help="re-run verifiers on a stored manifest")
    v.add_argument("manifest")

    d = sub.add_parser("plotdata", help="write CSV plot tables next to a manifest")
    d.add_argument("manifest")

    o = sub.add_parser("oracle", help="compare graph cuts with exhaustive search on a tiny grid")
    o.add_argument("config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            status, manifest = run_experiment(ExperimentConfig.load(args.config), args.out)
            print(f"manifest: {manifest}")
            return status
        if args.command == "verify":
            return verify_manifest(args.manifest)
        if args.command == "plotdata":
            for path in emit_plot_data(args.manifest):
                print(path)
            return 0
        return run_oracle(ExperimentConfig.load(args.config))
    except Exception as exc:  # report and exit nonzero instead of a traceback
        logging.getLogger("atwflow").debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
