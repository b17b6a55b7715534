"""Command line front end.

    behaviorimg pipeline --config run.toml
    behaviorimg train --config run.toml --out runs/a

Exit codes: 0 success, 1 data error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .codec import FormatError
from .cnn import CheckpointError, EmptyDataset
from .config import ConfigError, load_config, with_overrides
from .dataset import ClassTooSmall
from .ingest import CorpusMismatch, MalformedRow
from .pipeline import STAGES, StageError, run_pipeline, run_stage

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2

DATA_ERRORS = (
    MalformedRow, FileNotFoundError, FormatError, CheckpointError, EmptyDataset,
    ClassTooSmall, StageError, CorpusMismatch, OSError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="behaviorimg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int, help="base seed; split/sample/init/shuffle use seed..seed+3")
    common.add_argument("--ratio", type=float, help="majority:minority undersampling ratio")
    common.add_argument("--office-hours", metavar="HH:MM-HH:MM")
    common.add_argument("--out", metavar="DIR", help="run directory")
    common.add_argument("-v", "--verbose", action="store_true")
    helps = {
        "synth": "generate synthetic CERT-style logs",
        "ingest": "parse and count the five log files",
        "featurize": "extract raw per-user-day feature vectors",
        "prepare": "normalize per day, label, split and undersample",
        "encode": "write behavior images and the image manifest",
        "train": "train the CNN on the training images",
        "evaluate": "score the test images and write the report",
        "pipeline": "run every stage in order",
    }
    for name in (*STAGES, "pipeline"):
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = with_overrides(
            load_config(args.config),
            seed=args.seed, ratio=args.ratio, office_hours=args.office_hours, out=args.out,
        )
    except FileNotFoundError as exc:
        print(f"error: config file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "pipeline":
            run_pipeline(config)
        else:
            run_stage(config, args.command)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"{args.command}: done ({config.out_dir})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
