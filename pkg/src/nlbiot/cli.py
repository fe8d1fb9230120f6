"""Command line entry point: ``nlbiot {run,sweep,plot,bounds,verify}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments, verify

DEFAULT_OUT = Path("results")


def _configs(args):
    if not args.config:
        raise SystemExit("--config is required (a file path or one of "
                         f"{', '.join(experiments.preset_names())})")
    return experiments.with_max_iter(experiments.load_configs(args.config), args.max_iter)


def _stem(args) -> str:
    return Path(args.config).stem


def cmd_run(args) -> int:
    configs = _configs(args)
    if len(configs) != 1:
        print(f"config describes {len(configs)} runs; use 'sweep'", file=sys.stderr)
        return 2
    rec = experiments.run_single(configs[0])
    out = args.out / f"{_stem(args)}.csv"
    experiments.write_csv([rec], out)
    print(",".join(experiments.CSV_COLUMNS))
    print(",".join(rec.to_row()))
    return 0


def cmd_sweep(args) -> int:
    configs = _configs(args)
    out = args.out / f"{_stem(args)}.csv"
    recs = experiments.run_sweep(configs, out, jobs=args.jobs)
    n_conv = sum(r.converged for r in recs)
    print(f"{len(recs)} runs ({n_conv} converged) -> {out}")
    return 0


def cmd_plot(args) -> int:
    csv_path = Path(args.csv)
    out = args.out / f"{csv_path.stem}.svg"
    experiments.plot(csv_path, out, title=args.title)
    print(out)
    return 0


def cmd_bounds(args) -> int:
    out = args.out / f"{_stem(args)}_bounds.csv"
    rows = experiments.write_bound_report(_configs(args), out)
    for row in rows:
        print("  ".join(f"{k}={v:.4g}" for k, v in row.items()))
    print(f"-> {out}")
    return 0


def cmd_verify(args) -> int:
    numbers = [int(n) for n in args.criteria.split(",")] if args.criteria else None
    results = verify.run_all(numbers, jobs=args.jobs)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failing: {failed}" if failed else ""))
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file or preset name (fig3 ... fig7)")
    common.add_argument("--out", type=Path, default=DEFAULT_OUT, help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--max-iter", type=int, default=None,
                        help="override the fixed-stress iteration cap")

    parser = argparse.ArgumentParser(prog="nlbiot", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("run", parents=[common], help="run a single configuration")
    sub.add_parser("sweep", parents=[common], help="run a parameter grid into a CSV")
    p = sub.add_parser("plot", parents=[common], help="iteration counts against h as SVG")
    p.add_argument("csv", help="CSV written by 'sweep'")
    p.add_argument("--title", default=None)
    sub.add_parser("bounds", parents=[common], help="theory bound report for a grid")
    v = sub.add_parser("verify", parents=[common], help="run the acceptance checks")
    v.add_argument("--criteria", default=None, help="comma separated subset, e.g. 1,3")
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "plot": cmd_plot,
            "bounds": cmd_bounds, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        raise SystemExit("--jobs must be at least 1")
    try:
        return COMMANDS[args.verb](args)
    except (experiments.ConfigError, experiments.CSVFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
