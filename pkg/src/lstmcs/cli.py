"""Command-line entry point: ``lstmcs <command> --config FILE [--key value ...]``."""
from __future__ import annotations

import argparse
import logging
import sys

from .exceptions import ConfigurationError, ImageFormatError, ModelFormatError
from .experiments import COMMANDS, run
from .io import CANONICAL_KEYS, load_config

HELP = {
    "train": "train a decoder, write the model file and training_log.csv",
    "solve": "decode the test set with every configured solver",
    "sweep": "sweep k, sigma or m_over_n and write sweep.csv",
    "timing": "measure per-vector solve time of each solver",
    "gen-data": "write a seeded synthetic data set",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lstmcs", description="LSTM-guided greedy decoding of MMV problems")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="flat 'key = value' configuration file")
        group = p.add_argument_group("overrides", "any configuration key; lists are comma separated")
        for key in CANONICAL_KEYS:
            group.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="VALUE")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k in CANONICAL_KEYS and v is not None}
    try:
        cfg = load_config(args.config, overrides)
        run(args.command, cfg)
    except (ConfigurationError, ModelFormatError, ImageFormatError) as exc:
        print(f"lstmcs {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
