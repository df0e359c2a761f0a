import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from src.components.commands import COMMANDS
from src.models.settings import RunConfig, ScenePreset, TrainMode
from src.utils.config import get_config_value, load_config
from src.utils.errors import ConfigError, DepthMotionError
from src.utils.logger import setup_logger

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CRASH = 2


def _on_off(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("on", "true", "yes", "1"):
        return True
    if lowered in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on or off, got {value!r}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value (or .json/.yaml) config file; flags override its values")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--name", help="run name used in reports")
    parser.add_argument("--log-level", dest="log_level")
    parser.add_argument("--progress", type=_on_off, help="progress bars on/off")


def _add_training(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mode", choices=[m.value for m in TrainMode])
    parser.add_argument("--steps", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--l2-reg", dest="l2_reg", type=float)
    parser.add_argument("--size-constraint-weight", dest="size_constraint_weight", type=float)
    parser.add_argument("--size-prior-init", dest="size_prior_init", type=float)
    parser.add_argument("--num-categories", dest="num_categories", type=int)
    parser.add_argument("--log-every", dest="log_every", type=int)


def _add_evaluation(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", help="canonical dataset directory")
    parser.add_argument("--checkpoint", help="checkpoint file")
    parser.add_argument("--median-scale", dest="median_scale", type=_on_off, help="on or off (default on)")
    parser.add_argument("--cap", type=float, help="evaluation depth cap (default 80)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthmotion", description="Depth and motion learning from monocular video")
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", help="render a synthetic dataset")
    _add_common(generate)
    generate.add_argument("--n", type=int, help="number of entries")
    generate.add_argument("--preset", choices=[p.value for p in ScenePreset])
    generate.add_argument("--height", type=int)
    generate.add_argument("--width", type=int)
    generate.add_argument("--sequence-length", dest="sequence_length", type=int,
                          help="write sequences of this many frames instead of triplets")
    generate.add_argument("--from-kitti", dest="from_kitti",
                          help="convert a rasterized driving sequence instead of rendering scenes")

    train = sub.add_parser("train", help="train a model from scratch")
    _add_common(train)
    _add_training(train)
    train.add_argument("--dataset", help="canonical dataset directory")

    for name, help_text in (("refine", "evaluate with online refinement"), ("eval", "evaluate a checkpoint")):
        command = sub.add_parser(name, help=help_text)
        _add_common(command)
        _add_evaluation(command)
        command.add_argument("--mode", choices=[m.value for m in TrainMode])
        if name == "refine":
            command.add_argument("--refine-steps", dest="refine_steps", type=int, help="steps per window (default 20)")
            command.add_argument("--refine-learning-rate", dest="refine_learning_rate", type=float)
            command.add_argument("--refine-update", dest="refine_update", choices=["all", "depth"],
                                 help="parameters refined per window (default all)")
            command.add_argument("--static-threshold", dest="static_threshold", type=float)
            command.add_argument("--flip-augmentation", dest="flip_augmentation", type=_on_off)
            command.add_argument("--reset-per-sequence", dest="reset_per_sequence", type=_on_off)

    report = sub.add_parser("report", help="compare evaluated runs")
    _add_common(report)
    report.add_argument("runs", nargs="*", help="run directories or metrics.json files")
    return parser


def build_run_config(args: argparse.Namespace, file_values: Dict[str, Any]) -> RunConfig:
    """File values overridden by the flags that were actually given"""
    values = dict(file_values)
    for key, value in vars(args).items():
        if key == "log_level" or value is None or value == []:
            continue
        values[key] = value
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _, file_values = load_config(args.config)
    except DepthMotionError as e:
        setup_logger("src", args.log_level)
        logger.error(f"{e}")
        return EXIT_ERROR
    setup_logger("src", args.log_level or get_config_value("logging.level", "INFO"))

    try:
        run = build_run_config(args, file_values)
        logger.info(f"Running {run.command}")
        COMMANDS[run.command](run)
    except (DepthMotionError, ValidationError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_ERROR
    except Exception:
        logger.exception(f"{args.command} crashed")
        return EXIT_CRASH
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
