#!/usr/bin/env python3
"""
Main entry point for the eigenstate learnability lab.
This module ties together all components and provides a command-line interface.
"""

import argparse
import json
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from loguru import logger

from experiments import ExperimentRunner, replay
from settings import resolve_settings


DEFAULT_CONFIG = str(Path(__file__).resolve().parent.parent / "config" / "config.json")

# CLI subcommand -> experiment kind
COMMANDS = {
    "generate": "generate",
    "diagnostics": "diagnostics",
    "train": "train",
    "sweep-spectrum": "sweep_spectrum",
    "sweep-m": "sweep_num_states",
    "sweep-hidden": "sweep_hidden",
    "generalize": "generalization_hole",
    "gap": "learnability_gap",
    "two-param": "two_param",
    "supervised": "supervised",
    "history": "training_history",
}


# Configure logger
def setup_logger(log_level: str = "INFO", log_dir: str = "logs", rotation: str = "1 day",
                 retention: str = "1 month"):
    """
    Set up the logger with the specified log level.

    Args:
        log_level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_dir: Directory of the rotating log files
        rotation: Rotation interval of the file sink
        retention: How long rotated files are kept
    """
    # Remove default logger
    logger.remove()

    # Add console logger
    logger.add(sys.stderr, level=log_level)

    # Add file logger
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)

    log_file = log_dir / f"learnability_lab_{datetime.now().strftime('%Y%m%d')}.log"
    logger.add(
        log_file,
        level=log_level,
        rotation=rotation,
        retention=retention,
        compression="zip"
    )

    logger.info(f"Logger initialized with level {log_level}")


def setup_logger_from_config(config: Dict[str, Any]):
    logging_config = config["logging"]
    setup_logger(
        logging_config["level"],
        logging_config.get("directory", "logs"),
        logging_config.get("rotation", "1 day"),
        logging_config.get("retention", "1 month"),
    )


class LearnabilityLab:
    """
    Main class for the eigenstate learnability lab.
    """

    def __init__(self, config_path: str, preset: Optional[str] = None, params_path: Optional[str] = None,
                 flags: Optional[Dict[str, Any]] = None):
        """
        Initialize the lab with configuration.

        Args:
            config_path: Path to the configuration file
            preset: Optional preset name (desk, paper)
            params_path: Optional flat key=value parameter file
            flags: Explicitly given command-line flags
        """
        # Load environment variables
        load_dotenv()

        # Resolve configuration
        self.config = resolve_settings(config_path, preset, params_path, flags)

        # Set up logger
        setup_logger_from_config(self.config)

        # Initialize components
        self.runner = ExperimentRunner(self.config)

        logger.info(f"Eigenstate learnability lab initialized (preset={self.config['preset']})")

    def run(self, kind: str) -> Dict[str, str]:
        """
        Run one experiment and return the written files.

        Args:
            kind: Experiment kind

        Returns:
            Dict: Output name to path
        """
        _, outputs = self.runner.run_suite(kind)
        return outputs


def build_parser() -> argparse.ArgumentParser:
    """Build the command-line parser."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=DEFAULT_CONFIG, help="Path to configuration file")
    common.add_argument("--params", type=str, help="Flat key=value parameter file (flags override it)")
    common.add_argument("--preset", type=str, choices=["desk", "paper"], help="Named configuration preset")
    common.add_argument("--l", type=int, help="Chain length L")
    common.add_argument("--protocol", type=str, choices=["low", "mid", "single"], help="Spectral protocol")
    common.add_argument("--m", type=int, nargs="+", help="Number of input states M (list for sweeps)")
    common.add_argument("--m-index", type=int, nargs="+", help="1-based single-state index (list for sweeps)")
    common.add_argument("--samples", type=int, nargs="+", help="Number of samples N_sam (list for sweeps)")
    common.add_argument("--hidden", type=int, nargs="+", help="Hidden width w_H (list for sweeps)")
    common.add_argument("--epochs", type=int, help="Number of epochs")
    common.add_argument("--lr", type=float, help="Adam learning rate")
    common.add_argument("--gamma", type=float, help="Weight of the diagonal Rayleigh term (default 0.1)")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--batch-size", type=int, help="Mini-batch size")
    common.add_argument("--loss-mode", type=str, choices=["rayleigh", "supervised_theta"], help="Training objective")
    common.add_argument("--sampling", type=str, choices=["grid", "uniform"], help="Latent sampling mode")
    common.add_argument("--threads", type=int, help="Worker threads (1 = reproducible single-thread mode)")
    common.add_argument("--out", type=str, help="Output directory")
    common.add_argument("--log-level", type=str, help="Log level override")

    parser = argparse.ArgumentParser(description="Eigenstate Learnability Lab")
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "Generate and save an eigenstate dataset",
        "diagnostics": "Density of states, entanglement and participation entropies",
        "train": "Train the encoder once and save a checkpoint",
        "sweep-spectrum": "Single-state protocol across the spectrum",
        "sweep-m": "Low and mid protocols across the number of states",
        "sweep-hidden": "Low and mid protocols across the hidden width",
        "generalize": "Full versus holed training domain",
        "gap": "Learnability gap over the capacity class",
        "two-param": "Joint inference of J1 and J2",
        "supervised": "Training with the supervised parameter loss",
        "history": "Training histories across L and M",
    }
    for command in COMMANDS:
        subparsers.add_parser(command, parents=[common], help=helps[command])

    replay_parser = subparsers.add_parser("replay", parents=[common], help="Re-run an experiment from its manifest")
    replay_parser.add_argument("manifest", type=str, help="Manifest JSON written by a previous run")
    return parser


def collect_flags(args: argparse.Namespace) -> Dict[str, Any]:
    """Explicitly given flags in flat-key form."""
    keys = ("l", "protocol", "m", "m_index", "samples", "hidden", "epochs", "lr", "gamma", "seed",
            "batch_size", "loss_mode", "sampling", "threads", "out")
    return {key: getattr(args, key) for key in keys if getattr(args, key, None) is not None}


def main(argv=None) -> int:
    """Main entry point for the script."""
    args = build_parser().parse_args(argv)
    if args.log_level:
        os.environ["LEARNABILITY_LOG_LEVEL"] = args.log_level

    try:
        if args.command == "replay":
            load_dotenv()
            setup_logger_from_config(resolve_settings(args.config))
            _, outputs = replay(args.manifest, output_dir=args.out)
        else:
            lab = LearnabilityLab(args.config, args.preset, args.params, collect_flags(args))
            outputs = lab.run(COMMANDS[args.command])
    except Exception as e:
        logger.error(f"Error running {args.command}: {str(e)}")
        return 1

    print(json.dumps(outputs, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
