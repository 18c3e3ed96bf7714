"""Command line front end: one subcommand per pipeline stage"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from . import PROCESSES
from .errors import GraspBuilderError, InputValidationError
from .grasp_dataclasses.config import GraspBuilderConfig, config_hash, load_config
from .pipeline import (
    cmd_bps,
    cmd_dataset,
    cmd_eval,
    cmd_export,
    cmd_regions,
    cmd_report,
    cmd_sample,
    cmd_synth,
    cmd_train,
)

logger = logging.getLogger(__name__)

VALIDATION_EXIT_CODE = InputValidationError.exit_code


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--seed", type=int, help="master seed for every seeded stage")
    common.add_argument("--jobs", type=int, help=f"worker processes (default {PROCESSES})")
    common.add_argument(
        "--allow-config-change",
        action="store_true",
        help="accept input records written under a different config",
    )
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="semantic-grasp-builder",
        description="Build semantically conditioned grasp datasets and samplers",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    regions = commands.add_parser("regions", parents=[common], help="propose useful regions")
    regions.add_argument("scene", type=Path)
    source = regions.add_mutually_exclusive_group(required=True)
    source.add_argument("--masks", type=Path, help="directory of PGM masks and sidecars")
    source.add_argument("--oracle", action="store_true", help="use the scene's planted regions")
    regions.add_argument("--out", type=Path, required=True, help="region directory")

    synth = commands.add_parser("synth", parents=[common], help="optimise candidate grasps")
    synth.add_argument("scene", type=Path)
    synth.add_argument("--regions", type=Path, required=True)
    synth.add_argument("--hand", type=Path, help="hand file (default: bundled hand)")
    synth.add_argument("--count", type=int, help="grasps per object and prompt")
    synth.add_argument("--traces", type=Path, help="directory for per-candidate energy traces")
    synth.add_argument("--out", type=Path, required=True)

    evaluate = commands.add_parser("eval", parents=[common], help="label candidates")
    evaluate.add_argument("candidates", type=Path)
    evaluate.add_argument("--scene", type=Path)
    evaluate.add_argument("--hand", type=Path)
    evaluate.add_argument("--out", type=Path, required=True)

    dataset = commands.add_parser("dataset", parents=[common], help="filter by smooth label")
    dataset.add_argument("evaluated", type=Path)
    dataset.add_argument("--threshold", type=float)
    dataset.add_argument("--out", type=Path, required=True)

    bps = commands.add_parser("bps", parents=[common], help="attach basis point encodings")
    bps.add_argument("records", type=Path)
    bps.add_argument("--scene", type=Path)
    bps.add_argument("--out", type=Path, required=True)

    train = commands.add_parser("train", parents=[common], help="train the denoiser")
    train.add_argument("dataset", type=Path)
    train.add_argument("--scene", type=Path)
    train.add_argument("--loss", type=Path, help="CSV file for the loss trace")
    train.add_argument("--out", type=Path, required=True, help="checkpoint file")

    sample = commands.add_parser("sample", parents=[common], help="sample grasps from a model")
    sample.add_argument("checkpoint", type=Path)
    sample.add_argument("scene", type=Path)
    sample.add_argument("-n", "--count", type=int, default=64)
    sample.add_argument("--hand", type=Path)
    sample.add_argument("--out", type=Path, required=True)

    export = commands.add_parser("export", parents=[common], help="write viewable meshes")
    export.add_argument("records", type=Path)
    export.add_argument("--scene", type=Path)
    export.add_argument("--hand", type=Path)
    export.add_argument("--archive", choices=["tar.gz", "tar", "zip"])
    export.add_argument("--out", type=Path, required=True, help="export directory")

    report = commands.add_parser("report", parents=[common], help="success rates as CSV")
    report.add_argument("records", type=Path)
    report.add_argument("--out", type=Path, required=True)
    return parser


def effective_config(args: argparse.Namespace) -> GraspBuilderConfig:
    """Config file plus command line overrides"""
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.jobs is not None:
        config = config.with_overrides(pipeline={"jobs": args.jobs})
    if getattr(args, "archive", None):
        config = config.with_overrides(pipeline={"archive": args.archive})
    return config


def run(args: argparse.Namespace) -> None:
    config = effective_config(args)
    allow = args.allow_config_change
    logger.info("running %s under config %s", args.command, config_hash(config))
    match args.command:
        case "regions":
            cmd_regions(args.scene, args.out, config, masks_dir=args.masks, oracle=args.oracle)
        case "synth":
            cmd_synth(
                args.scene,
                args.regions,
                args.out,
                config,
                hand_path=args.hand,
                count=args.count,
                traces_dir=args.traces,
            )
        case "eval":
            cmd_eval(args.candidates, args.out, config, args.scene, args.hand, allow)
        case "dataset":
            cmd_dataset(args.evaluated, args.out, config, args.threshold, allow)
        case "bps":
            cmd_bps(args.records, args.out, config, args.scene, allow)
        case "train":
            cmd_train(args.dataset, args.out, config, args.scene, args.loss, allow)
        case "sample":
            cmd_sample(args.checkpoint, args.scene, args.count, args.out, config, args.hand)
        case "export":
            cmd_export(args.records, args.out, config, args.scene, args.hand, allow)
        case "report":
            cmd_report(args.records, args.out, config, allow)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run a stage and map failures to exit codes"""
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except GraspBuilderError as err:
        logger.error("%s", err)
        return err.exit_code
    except (FileNotFoundError, ValidationError) as err:
        logger.error("%s", err)
        return VALIDATION_EXIT_CODE
    return 0


if __name__ == "__main__":
    sys.exit(main())
