import argparse
import sys
from typing import Optional, Sequence

import structlog

from .config import settings
from .errors import ConfigError
from .experiments.config_file import parse_config
from .experiments.runner import run
from .log import configure_logging

logger = structlog.get_logger()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steklov-lab",
        description="Steklov spectra, DtN operators and Robin transport on prefractal domains",
    )
    parser.add_argument("config", help="flat key=value experiment file")
    parser.add_argument("--out", help="output directory (default: <output_dir>/<experiment>)")
    parser.add_argument("--seed", type=int, help="override the seed in the config file")
    parser.add_argument("--threads", type=int, help="worker threads for column-wise solves")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Exit status 0 iff every acceptance check passed, 1 otherwise, 2 on a bad config"""

    args = build_parser().parse_args(argv)
    configure_logging(settings.log_level, settings.log_json)

    try:
        config = parse_config(args.config)
        if args.seed is not None:
            config = config.model_copy(update={"seed": args.seed})
    except ConfigError as e:
        logger.error("Invalid configuration", error=e.message, line=e.line, key=e.key)
        return 2

    if args.threads is not None and args.threads < 1:
        logger.error("Invalid thread count", threads=args.threads)
        return 2

    manifest = run(config, args.out, args.threads)
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
