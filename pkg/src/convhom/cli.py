"""Command line entry point: ``convhom run|validate|plot``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import HomogenizationError
from .harness import PLOT_KINDS, emit_plot_data, run_loaded


def build_parser():
    parser = argparse.ArgumentParser(prog="convhom", description="Homogenization campaigns for convolution energies.")
    parser.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    parser.add_argument("--output-dir", default=None, help="override output.directory")
    parser.add_argument("--seed-override", type=int, default=None,
                        help="replace the seed list by N, N+1, ... (same count)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a config")
    p_run.add_argument("config")
    p_val = sub.add_parser("validate", help="schema check only")
    p_val.add_argument("config")
    p_plot = sub.add_parser("plot", help="write a plot-ready table from results.csv")
    p_plot.add_argument("results")
    p_plot.add_argument("--kind", required=True, choices=PLOT_KINDS)
    # flags are accepted after the subcommand as well
    for p in (p_run, p_val, p_plot):
        p.add_argument("--workers", type=int, default=argparse.SUPPRESS)
        p.add_argument("--output-dir", default=argparse.SUPPRESS)
        p.add_argument("--seed-override", type=int, default=argparse.SUPPRESS)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        if args.command == "plot":
            out = None
            if args.output_dir:
                Path(args.output_dir).mkdir(parents=True, exist_ok=True)
                out = Path(args.output_dir) / f"{args.kind}.dat"
            print(emit_plot_data(args.results, args.kind, out))
            return 0
        cfg = load_config(args.config, seed_override=args.seed_override, output_dir=args.output_dir)
        if args.command == "validate":
            print(f"ok: {cfg.name} ({cfg.experiment}) config_hash={cfg.config_hash}")
            return 0
        status, summary = run_loaded(cfg, workers=args.workers)
        for name, probe in summary["probes"].items():
            print(f"{name}: {'pass' if probe['pass'] else 'FAIL'}")
        print(f"results written to {cfg.output_dir}")
        return status
    except HomogenizationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
