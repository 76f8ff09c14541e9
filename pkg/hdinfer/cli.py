"""
Command line entry point: `hdinfer run` and `hdinfer validate`
"""
import argparse
import dataclasses
import logging
import os
import sys
from typing import Optional

from hdinfer import experiments
from hdinfer.io import get_conf


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# =========
# Constants
# =========
THREADS_ENV_VAR = "HDINFER_THREADS"
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2


# ======
# Parser
# ======
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdinfer",
        description="Monte Carlo experiments for inference on many means"
        " and regularized GMM",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--verbose", action="store_true", help="log at DEBUG level"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    run = subparsers.add_parser(
        "run", parents=[common], help="run an experiment config"
    )
    run.add_argument("config", help="path to the JSON experiment config")
    run.add_argument("--seed", type=int, default=None, help="override seed")
    run.add_argument(
        "--threads",
        type=int,
        default=None,
        help=f"replication workers, else ${THREADS_ENV_VAR}, else defaults",
    )
    run.add_argument(
        "--out", default=None, help="override the output directory"
    )
    run.add_argument(
        "--quiet", action="store_true", help="hide the progress bar"
    )
    validate = subparsers.add_parser(
        "validate", parents=[common], help="check a config"
    )
    validate.add_argument("config", help="path to the JSON experiment config")
    return parser


def resolve_threads(flag: Optional[int]) -> int:
    """--threads, then $HDINFER_THREADS, then conf/defaults.yaml"""
    if flag is not None:
        threads = flag
    elif os.environ.get(THREADS_ENV_VAR):
        raw = os.environ[THREADS_ENV_VAR]
        try:
            threads = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV_VAR} must be an integer, {raw=}")
    else:
        threads = get_conf("defaults.yaml")["threads"]
    if threads == 0 or threads < -1:
        raise ValueError(f"threads must be >= 1 or -1 (all cores), {threads=}")
    return threads


# ========
# Commands
# ========
def _run(args: argparse.Namespace) -> int:
    cfg = experiments.load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    cfg = dataclasses.replace(cfg, **overrides)
    if cfg.seed < 0:
        raise experiments.ConfigError("seed must be nonnegative", "seed")
    threads = resolve_threads(flag=args.threads)
    output = experiments.run_experiment(
        cfg=cfg, n_jobs=threads, progress=not args.quiet
    )
    experiments.write_outputs(cfg=cfg, output=output, folder=cfg.output_dir)
    logger.info(f"Done, outputs in {cfg.output_dir}")
    return EXIT_OK


def _validate(args: argparse.Namespace) -> int:
    cfg = experiments.load_config(args.config)
    logger.info(
        f"{args.config} is valid: {cfg.experiment} on {cfg.dgp.variant},"
        f" {cfg.replications} replications"
    )
    return EXIT_OK


def main(argv: Optional[list] = None) -> int:
    """Parse `argv`, run the command and return the exit code"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format="[%(levelname)s] %(asctime)s %(message)s",
        level=logging.DEBUG if args.verbose else logging.INFO,
    )
    command = _run if args.command == "run" else _validate
    try:
        return command(args)
    except experiments.ConfigError as e:
        logger.error(f"Invalid config {args.config}: {e}")
        return EXIT_CONFIG_ERROR
    except FileNotFoundError as e:
        logger.error(str(e))
        return EXIT_CONFIG_ERROR
    except Exception as e:
        logger.exception(f"Experiment failed: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
