"""Command line entry point.

    vesselforge <stage|pipeline> --config PATH [--seed N] [--out DIR]
    vesselforge report (--config PATH | --out DIR)

Exit codes: 0 success, 2 configuration or dependency error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .pipeline import STAGES, ConfigError, StageError, parse_config, render_figures, run_pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def build_parser():
    p = argparse.ArgumentParser(prog="vesselforge", description="Image-to-mesh vessel modelling pipeline.")
    p.add_argument("command", choices=(*STAGES, "pipeline", "report"),
                   help="a single stage, the configured pipeline, or figure rendering")
    p.add_argument("--config", help="pipeline config (JSON)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--force", action="store_true", help="ignore cached stage results")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "report":
        out = args.out
        if out is None:
            if args.config is None:
                print("error: report needs --out or --config", file=sys.stderr)
                return EXIT_CONFIG
            try:
                out = parse_config(args.config).out_dir
            except ConfigError as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
        for path in render_figures(out):
            print(path)
        return EXIT_OK

    if args.config is None:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out_dir"] = args.out
        if overrides:
            cfg = cfg.replace(**overrides)
        stages = None if args.command == "pipeline" else [args.command]
        doc = run_pipeline(cfg, stages=stages, force=args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    for stage in doc["stages"]:
        for rel, digest in sorted(doc["stages"][stage]["outputs"].items()):
            if not args.quiet:
                print(f"{digest}  {rel}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
