"""Command line entry point: ``proma train|compare|selftest|plot``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import plotting
from .config import RUN_STRATEGIES, RunConfig, load_config
from .errors import ConfigError, NumericalAbort
from .runner import compare, default_out_dir, train
from .selftest import run_selftest

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="proma", description="Projected gradient accumulation experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one policy")
    t.add_argument("--config", type=Path, help="TOML run configuration")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", type=Path, help="output directory (default: $PROMA_OUT_DIR or ./runs)")
    t.add_argument("--strategy", choices=RUN_STRATEGIES)

    c = sub.add_parser("compare", help="train several strategies on one task and overlay them")
    c.add_argument("--config", type=Path, action="append", default=[],
                   help="run configuration; repeat for several runs")
    c.add_argument("--strategy", choices=RUN_STRATEGIES, action="append", default=[],
                   help="strategy to run on the (single) config; repeatable")
    c.add_argument("--seed", type=int)
    c.add_argument("--out", type=Path)

    sub.add_parser("selftest", help="run the built-in oracle checks")

    p = sub.add_parser("plot", help="re-render the four panels from a metrics CSV")
    p.add_argument("--in", dest="csv", type=Path, required=True)
    p.add_argument("--out", type=Path)
    return parser


def _base_config(path) -> RunConfig:
    return load_config(path) if path is not None else RunConfig()


def _run(args) -> int:
    if args.command == "selftest":
        return run_selftest()
    if args.command == "plot":
        try:
            paths = plotting.plot_csv(args.csv, args.out)
        except (OSError, ValueError, IndexError) as exc:
            raise ConfigError(f"cannot plot {args.csv}: {exc}") from exc
        for path in paths:
            print(path)
        return EXIT_OK
    out = args.out if args.out is not None else default_out_dir()
    if args.command == "train":
        cfg = _base_config(args.config).with_overrides(seed=args.seed, strategy=args.strategy)
        arts = train(cfg, out)
        print(f"wrote {arts.metrics_csv} ({len(arts.records)} steps)")
        return EXIT_OK
    # compare
    if len(args.config) > 1:
        if args.strategy:
            raise ConfigError("--strategy applies to a single --config in compare")
        cfgs = [load_config(p).with_overrides(seed=args.seed) for p in args.config]
    else:
        base = _base_config(args.config[0] if args.config else None).with_overrides(seed=args.seed)
        cfgs = [base.with_overrides(strategy=s) for s in args.strategy]
    report = compare(cfgs, out)
    metrics = list(next(iter(report.summary.values())))
    print("run".ljust(14) + "".join(m.rjust(14) for m in metrics))
    for label, row in report.summary.items():
        print(label.ljust(14) + "".join(f"{row[m]:14.5g}" for m in metrics))
    print(f"wrote {report.summary_csv}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:       # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
