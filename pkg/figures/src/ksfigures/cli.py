"""figures {rates, norms, snapshot} --in RUN_DIR --out FILE.png"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .io import MissingColumns
from .plots import plot_norms, plot_rates, plot_snapshot


def build_parser():
    parser = argparse.ArgumentParser(prog="figures", description=__doc__)
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind, helptext in (("rates", "log-log error-vs-N with fitted slope"),
                           ("norms", "norm traces with blow-up marker"),
                           ("snapshot", "particle cloud or density image")):
        p = sub.add_parser(kind, help=helptext)
        p.add_argument("--in", dest="run_dir", required=True,
                       help="run directory with the CSV/manifest outputs")
        p.add_argument("--out", required=True, help="output image path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    run_dir = Path(args.run_dir)
    try:
        if args.kind == "rates":
            meta = plot_rates(run_dir / "errors.csv", run_dir / "rates.csv",
                              args.out)
            print(f"figures rates: slope {meta['slope_annotation']} over "
                  f"N={meta['n_values']} -> {args.out}")
        elif args.kind == "norms":
            meta = plot_norms(run_dir, args.out)
            mark = (f", trigger at t={meta['triggered_at']:.4g}"
                    if meta["triggered_at"] is not None else "")
            print(f"figures norms: {meta['points']} points{mark} -> {args.out}")
        else:
            meta = plot_snapshot(run_dir, args.out)
            print(f"figures snapshot: {meta['kind']} -> {args.out}")
    except MissingColumns as exc:
        print(f"figures: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
