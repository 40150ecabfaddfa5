"""Command line entry point.

One subcommand per pipeline stage plus `pipeline` to chain them. Exit
codes: 0 ok, 2 config error, 3 missing input, 4 internal invariant
violation, 5 stale stage artifact. Set CDP_LOG=debug|info|warning|error
to control verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import PipelineConfig, default_config_path, load_config
from .errors import (
    CdpError,
    ConfigError,
    InternalError,
    MissingInputError,
    StaleArtifactError,
)
from .pipeline import STAGES, run_pipeline, run_stage

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_INTERNAL = 4
EXIT_STALE = 5


def _setup_logging():
    level_name = os.environ.get("CDP_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdp",
        description=(
            "Consensus-driven propagation pipeline: build per-view k-NN graphs, "
            "score candidate pairs with a committee-aware classifier, and "
            "propagate pseudo-labels over the resulting consensus graph."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=False, default=None,
                       help="pipeline config file (INI); defaults to the bundled config")
        p.add_argument("--out", default=None, help="output directory (overrides [run] out)")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--workers", type=int, default=None,
                       help="worker threads for graph construction (never changes results)")

    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        add_common(p)

    p = sub.add_parser("pipeline", help="run every stage in order")
    add_common(p)
    p.add_argument("--stage", choices=STAGES, default=None,
                   help="start from this stage instead of the beginning")
    return parser


def _load(args) -> PipelineConfig:
    cfg_path = args.config if args.config else default_config_path()
    cfg = load_config(cfg_path)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be nonnegative, got {args.seed}")
        cfg.seed = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "pipeline":
            run_pipeline(cfg, cfg.out_dir, from_stage=args.stage)
        else:
            run_stage(args.command, cfg, cfg.out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except StaleArtifactError as exc:
        print(f"stale artifact: {exc}", file=sys.stderr)
        return EXIT_STALE
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except CdpError as exc:
        # data validation and format problems are input problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
