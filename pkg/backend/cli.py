"""Command line entry point: python cli.py --config configs/default.yaml --seed 0 --seed 1 --method dualgfl"""

import argparse
import sys

from services.experiment import ExperimentSpec, parse_ablation, run_experiment
from utils.config import METHODS, default_output_dir
from utils.errors import ConfigError
from utils.logger import get_logger

logger = get_logger("cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Simulate DualGFL and its baselines on a synthetic HFL system.")
    parser.add_argument("--config", help="flat YAML config document; defaults apply to missing keys")
    parser.add_argument("--seed", type=int, action="append", default=[],
                        help="seed to run (repeatable); defaults to the config's seed")
    parser.add_argument("--method", action="append", default=[],
                        help=f"selection method (repeatable), one of {', '.join(METHODS)}; "
                             "defaults to the config's method")
    parser.add_argument("--rounds", type=int, help="override the number of rounds")
    parser.add_argument("--capacity", type=int, help="override the coalition capacity")
    parser.add_argument("--out", default=None, help="output directory (default: $DUALGFL_OUTPUT_DIR or ./output)")
    parser.add_argument("--ablation", help="sweep one axis, e.g. capacity=6,8,10,15")
    parser.add_argument("--report", action="store_true", help="also render summary.pdf")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExperimentSpec(
            config_path=args.config,
            seeds=tuple(args.seed),
            methods=tuple(args.method),
            output_dir=args.out or default_output_dir(),
            rounds=args.rounds,
            capacity=args.capacity,
            ablation=parse_ablation(args.ablation) if args.ablation else None,
            report=args.report,
        )
        run_experiment(spec)
    except ConfigError as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_CONFIG
    except Exception as e:
        logger.exception("Experiment failed: %s", e)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
