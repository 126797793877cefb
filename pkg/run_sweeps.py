#!/usr/bin/env python3
"""
Batch runner for Score-Guided Planning experiments.

Each non-comment line of the input file is one ``sgp.py`` command line,
run in order in a subprocess. A typical file reproduces one environment's
pipeline end to end:

    gen-data --env pit --n 20000 --seed 1 --output-dir runs/pit
    train-dynamics --env pit --output-dir runs/pit
    train-score --env pit --output-dir runs/pit
    sweep --env pit --output-dir runs/pit --param beta --grid 0,1e-3,1e-2,1e-1,1,10,inf
"""

import argparse
import logging
import shlex
import subprocess
import sys
from datetime import datetime
from pathlib import Path

from score_guided_planning.paths import get_project_root


def parse_command_line(line: str) -> list[str] | None:
    """
    Parse one line of the batch file into ``sgp.py`` arguments.

    Examples:
        >>> parse_command_line("plan --env pit --method sgp")
        ["plan", "--env", "pit", "--method", "sgp"]
        >>> parse_command_line("# comment")
        None
    """
    line = line.strip()
    if not line or line.startswith("#"):
        return None
    return shlex.split(line)


def load_commands(file_path: str) -> list[list[str]]:
    """
    Load command lines from file.

    Raises:
        FileNotFoundError: If the batch file doesn't exist
    """
    commands = []
    with open(file_path) as f:
        for line_num, line in enumerate(f, 1):
            try:
                args = parse_command_line(line)
                if args:
                    commands.append(args)
            except ValueError as e:
                logging.warning(f"Invalid command at line {line_num}: {line.strip()}")
                logging.warning(f"Error: {str(e)}")
    return commands


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Run a file of Score-Guided Planning commands",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""Examples:
  python run_sweeps.py pit_pipeline.txt
  python run_sweeps.py pit_pipeline.txt --continue-on-error --log-level DEBUG""",
    )
    parser.add_argument(
        "commands_file", type=str, help="File with one sgp.py command line per line"
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        default="INFO",
        help="Set logging level (also passed to every command)",
    )
    parser.add_argument(
        "--continue-on-error",
        action="store_true",
        help="Keep going after a command fails",
    )
    return parser.parse_args(argv)


def setup_logging(args: argparse.Namespace) -> str:
    """Log to logs/run_sweeps_<timestamp>.log and stdout; returns the log file path."""
    log_dir = Path(get_project_root()) / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    log_path = log_dir / f"run_sweeps_{timestamp}.log"
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=[logging.FileHandler(log_path), logging.StreamHandler(sys.stdout)],
    )
    return str(log_path)


def build_command(args: list[str], log_level: str) -> list[str]:
    """The subprocess argv for one batch line; an explicit --log-level on the line wins."""
    cmd = [sys.executable, str(Path(get_project_root()) / "sgp.py"), *args]
    if "--log-level" not in args:
        cmd.extend(["--log-level", log_level])
    return cmd


def run_command(args: list[str], log_level: str) -> int:
    cmd = build_command(args, log_level)
    logging.info(f"Running: {shlex.join(cmd[2:])}")
    try:
        return subprocess.run(cmd, check=False, text=True).returncode
    except OSError as e:
        logging.error(f"Could not start {shlex.join(cmd[2:])}: {e}")
        return 1


def main(argv=None) -> int:
    """
    Run every command in the batch file.

    Returns:
        int: 0 when every command succeeded, 1 otherwise
    """
    args = parse_args(argv)
    log_path = setup_logging(args)
    logging.info(f"Log file: {log_path}")

    try:
        commands = load_commands(args.commands_file)
    except FileNotFoundError:
        logging.error(f"Commands file '{args.commands_file}' not found")
        return 1
    if not commands:
        logging.error("No commands found in input file")
        return 1

    failed = []
    for i, command in enumerate(commands, 1):
        logging.info(f"Command {i}/{len(commands)}")
        code = run_command(command, args.log_level)
        if code != 0:
            logging.error(f"Exit code {code}: {shlex.join(command)}")
            failed.append(command)
            if not args.continue_on_error:
                logging.error(
                    "Stopping due to error. Use --continue-on-error to run the remaining commands."
                )
                break

    logging.info(f"Succeeded: {len(commands) - len(failed)}/{len(commands)} commands")
    if failed:
        for command in failed:
            logging.error(f"- {shlex.join(command)}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
