"""
Main module for LLaCA.

Command-line interface:

    python -m llaca.main run     [--config PATH] [--policy plain|fixed|llaca] [--beta B] [--seed S] [--out DIR]
    python -m llaca.main ablate  [--config PATH] [--beta B] [--seed S] [--out DIR]
    python -m llaca.main metrics MATRIX [--out DIR]
    python -m llaca.main tasks   [--config PATH] [--seed S] [--out DIR]

Exit codes: 0 success, 1 configuration or input-format error, 2 runtime or
numeric error.
"""

import argparse
import logging
import sys

from colorama import Fore, Style, just_fix_windows_console
from dotenv import load_dotenv

from llaca.config.settings import build_run_config, get_config, load_config_file
from llaca.core.api import compute_metrics, generate_tasks, read_matrix_csv, run_ablation, train_continual
from llaca.core.metrics import format_report, write_report
from llaca.core.tasks import export_csv
from llaca.core.trainer import write_ablation, write_artifacts
from llaca.exceptions import ConfigError, LlacaError, MatrixFormatError
from llaca.utils.logging_utils import configure_logging

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _add_run_options(parser, with_policy=True, with_beta=True):
    parser.add_argument("--config", "-c", help="INI configuration file")
    if with_policy:
        parser.add_argument("--policy", "-p", choices=["plain", "fixed", "llaca"], help="Update policy")
    if with_beta:
        parser.add_argument("--beta", type=float, help="Constant weight of the fixed EMA policy")
    parser.add_argument("--seed", "-s", type=int, help="Run seed (also seeds tasks and initialization)")
    parser.add_argument("--out", "-o", help="Output directory")
    parser.add_argument("--quiet", "-q", action="store_true", help="Suppress status messages")


def build_parser():
    """
    Build the command-line parser.

    Returns:
        argparse.ArgumentParser with the run, ablate, metrics and tasks commands
    """
    parser = argparse.ArgumentParser(prog="llaca", description="Dynamic EMA continual-learning harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_options(sub.add_parser("run", help="Train one policy on the task stream"))
    _add_run_options(sub.add_parser("ablate", help="Compare plain, fixed EMA and dynamic EMA"), with_policy=False)

    metrics = sub.add_parser("metrics", help="Compute metrics from an accuracy-matrix CSV")
    metrics.add_argument("matrix", help="CSV path or bundled fixture name (type1 ... type4)")
    metrics.add_argument("--out", "-o", help="Also write metrics.txt and metrics.csv here")
    metrics.add_argument("--quiet", "-q", action="store_true", help="Suppress status messages")

    _add_run_options(sub.add_parser("tasks", help="Export the generated task stream as CSV"),
                     with_policy=False, with_beta=False)
    return parser


def _resolve_config(args):
    """Merge defaults, the config file and CLI flags into a flat config dict."""
    overrides = {}
    if getattr(args, "config", None):
        overrides, defaulted = load_config_file(args.config)
        if defaulted:
            print(f"{Fore.YELLOW}Notice: {len(defaulted)} keys not set in {args.config}, "
                  f"using defaults: {', '.join(defaulted)}{Style.RESET_ALL}")
    if getattr(args, "policy", None):
        overrides["POLICY"] = args.policy
    if getattr(args, "beta", None) is not None:
        overrides["EMA_BETA"] = args.beta
    if getattr(args, "seed", None) is not None:
        overrides["RUN_SEED"] = args.seed
    if getattr(args, "out", None):
        overrides["OUTPUT_DIR"] = args.out
    if getattr(args, "quiet", False):
        overrides["SHOW_STATUS"] = False
    return get_config(overrides)


def cmd_run(args):
    config = _resolve_config(args)
    configure_logging(config)
    run_config = build_run_config(config)
    artifacts = train_continual(run_config, show_progress=config["SHOW_STATUS"])
    write_artifacts(artifacts, config["OUTPUT_DIR"], save_checkpoints=config["SAVE_CHECKPOINTS"])
    report = compute_metrics(artifacts.accuracy_matrix)
    print(f"{Fore.GREEN}Run finished ({run_config.policy}), results in {config['OUTPUT_DIR']}{Style.RESET_ALL}")
    print(format_report(report), end="")
    return EXIT_OK


def cmd_ablate(args):
    config = _resolve_config(args)
    configure_logging(config)
    run_config = build_run_config(config)
    table, results = run_ablation(run_config, workers=int(config["ABLATE_WORKERS"]),
                                  show_progress=config["SHOW_STATUS"])
    write_ablation(table, results, config["OUTPUT_DIR"], save_checkpoints=config["SAVE_CHECKPOINTS"])
    print(f"{Fore.GREEN}Ablation finished, results in {config['OUTPUT_DIR']}{Style.RESET_ALL}")
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="n/a"))
    return EXIT_OK


def cmd_metrics(args):
    config = get_config({"SHOW_STATUS": not args.quiet})
    configure_logging(config)
    try:
        matrix = read_matrix_csv(args.matrix)
    except FileNotFoundError as e:
        raise ConfigError(str(e)) from e
    report = compute_metrics(matrix)
    if args.out:
        write_report(report, args.out)
    print(format_report(report), end="")
    return EXIT_OK


def cmd_tasks(args):
    config = _resolve_config(args)
    configure_logging(config)
    run_config = build_run_config(config)
    written = export_csv(generate_tasks(run_config.task_config), config["OUTPUT_DIR"])
    print(f"{Fore.GREEN}Wrote {len(written)} task files to {config['OUTPUT_DIR']}{Style.RESET_ALL}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "ablate": cmd_ablate,
    "metrics": cmd_metrics,
    "tasks": cmd_tasks,
}


def main(argv=None):
    """
    Main entry point for the command-line interface.

    Args:
        argv: Argument list (defaults to sys.argv[1:])

    Returns:
        Exit code
    """
    load_dotenv()
    just_fix_windows_console()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help exits with 0, usage errors count as configuration errors
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MatrixFormatError) as e:
        logging.error("[main] %s", e)
        print(f"{Fore.RED}Error: {e}{Style.RESET_ALL}", file=sys.stderr)
        return EXIT_CONFIG
    except (LlacaError, ArithmeticError, ValueError, OSError) as e:
        logging.error("[main] %s", e)
        print(f"{Fore.RED}Error: {e}{Style.RESET_ALL}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
