import argparse
import logging
import os
import sys

from src.logger_config import setup_logging

COMMAND_HELP = """commands:
  prepare-data       parse the IDX files into the dataset cache
  train-classifier   train the classifiers A-E
  gen-attacks        build the adversarial pair corpus
  train-vae          train the Defense-VAE on the corpus
  retrain-rec        retrain classifiers on reconstructions (REC bundles)
  finetune-e2e       jointly finetune VAE and classifier (E2E bundles)
  eval-whitebox      white-box accuracy table
  eval-leaveoneout   leave-one-attack-out table
  eval-blackbox      substitute transfer table
  bench-speed        purify vs z-search timing table
  purify-image       purify a single PGM image
  reproduce-all      full pipeline with acceptance checks
"""


# commands.EXIT_CONFIG; importing commands here would load numpy before pin_blas_threads
EXIT_USAGE = 1


class CommandLineParser(argparse.ArgumentParser):
    """argparse with usage errors exiting EXIT_USAGE instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> CommandLineParser:
    parser = CommandLineParser(prog="app.py", description="Defense-VAE adversarial robustness workbench",
                              epilog=COMMAND_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", help="pipeline command, see below")
    parser.add_argument("image", nargs="?", help="input image of purify-image")
    parser.add_argument("--config", metavar="PATH", help="configuration file (default: config/config_hidden.cfg, "
                                                         "then config/config.cfg)")
    parser.add_argument("--seed", type=int, help="override [admin] seed")
    parser.add_argument("--out", metavar="DIR", help="override [admin] output_dir")
    parser.add_argument("--force", action="store_true", help="redo steps whose outputs exist")
    parser.add_argument("--threads", type=int, help="override [admin] threads")
    parser.add_argument("--precision", type=int, choices=(32, 64), help="override [admin] precision")
    parser.add_argument("--verbose", action="store_true", help="log per-step detail")
    return parser


def pin_blas_threads(count: int) -> None:
    """Must run before numpy is imported."""
    for name in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(name, str(count))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return e.code
    level = logging.DEBUG if args.verbose else logging.INFO
    setup_logging(level=level)
    if args.command == "bench-speed":
        pin_blas_threads(1)

    # numpy-backed modules load after the thread pinning above
    from src.modules.commands import EXIT_CONFIG, dispatch
    from src.modules.config_parse import ConfigError, load_config

    try:
        config = load_config(args.config).with_overrides(args.seed, args.out, args.threads, args.precision)
    except ConfigError as e:
        logging.getLogger(__name__).error(f"Configuration error: {e}")
        return EXIT_CONFIG
    setup_logging(level=level, log_file_path=config.admin.log_file)
    return dispatch(args.command, config, args.force, args.image)


if __name__ == "__main__":
    sys.exit(main())
