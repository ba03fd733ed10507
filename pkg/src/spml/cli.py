"""Command-line entry point.

    spml generate-data --config spec.json --out <dir>
    spml train         --config cfg.json [--out <dir>] [--jobs <n>]
    spml sweep         --config cfg.json [--out <dir>] [--jobs <n>]
    spml analyze       --config analyze.json [--out <dir>]

Exit codes: 0 success, 2 config error, 3 missing artifact. The environment
variables SPML_OUTPUT_DIR and SPML_JOBS override only the output directory
and the cross-run parallelism; everything else comes from the config file.
"""
from __future__ import annotations

import argparse
import os
import sys

from .config import load_config_file, parse_experiment_config, parse_sweep_config
from .errors import ConfigError, ParseError
from .runner import run_analyze, run_generate_data, run_sweep, run_training

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spml",
        description="Single-positive multi-label learning workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_jobs in (
        ("generate-data", False),
        ("train", True),
        ("sweep", True),
        ("analyze", False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=None, help="output directory override")
        if needs_jobs:
            p.add_argument("--jobs", type=int, default=None, help="cross-run parallelism")
    return parser


def _resolve_out(cli_value, config_value):
    return cli_value or os.environ.get("SPML_OUTPUT_DIR") or config_value


def _resolve_jobs(cli_value) -> int:
    if cli_value is not None:
        return max(1, cli_value)
    env = os.environ.get("SPML_JOBS")
    return max(1, int(env)) if env else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        document = load_config_file(args.config)
        if args.command == "generate-data":
            out = _resolve_out(args.out, None)
            if not out:
                raise ConfigError("generate-data needs --out (or SPML_OUTPUT_DIR)")
            path = run_generate_data(document, out)
            print(f"wrote {path}")
        elif args.command == "train":
            cfg = parse_experiment_config(
                {k: v for k, v in document.items() if k != "sweep"}
            )
            out = _resolve_out(args.out, cfg.output_dir)
            summary = run_training(cfg, out, jobs=_resolve_jobs(args.jobs))
            print(
                f"method {summary['method']}: median best-val mAP "
                f"{summary['median_best_val_map']:.4f}, median test mAP "
                f"{summary['median_test_map']:.4f} ({out})"
            )
        elif args.command == "sweep":
            cfg = parse_experiment_config(
                {k: v for k, v in document.items() if k != "sweep"}
            )
            sweep = parse_sweep_config(document)
            if not sweep.grid:
                raise ConfigError("sweep needs a nonempty sweep.grid section")
            out = _resolve_out(args.out, cfg.output_dir)
            path = run_sweep(document, sweep, out, jobs=_resolve_jobs(args.jobs))
            print(f"wrote {path}")
        else:
            written = run_analyze(document, out_override=args.out)
            for path in written:
                print(f"wrote {path}")
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
