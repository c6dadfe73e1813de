import os
import sys
import json
import logging
import argparse

# Adjust path to import from crmlab_core, assuming main.py is in the repository root
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), ".")))

from crmlab_core.config_loader import load_config, thread_limit
from crmlab_core.errors import ConfigError, CrmlabError
from crmlab_core.logging_setup import setup_logging, TRANSACTION_LOGGER_NAME
from crmlab_core.file_system_manager import FileSystemManager
from crmlab_core.experiment_runner import ExperimentRunner, CERTIFICATES_FILE
from crmlab_core.sweep_runner import SweepRunner, parse_values


logger = logging.getLogger(__name__)  # Main application logger
transaction_logger = logging.getLogger(TRANSACTION_LOGGER_NAME)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def build_parser():
    parser = argparse.ArgumentParser(description="crmlab: closed-loop reference model adaptive control laboratory")
    parser.add_argument("--log-level", default=None, help="Override logging.level (DEBUG, INFO, WARNING, ...)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Simulate and certify one scenario")
    run.add_argument("config", help="Scenario configuration (YAML or JSON)")

    sweep = sub.add_parser("sweep", help="Run a scenario over the values of one parameter")
    sweep.add_argument("config", help="Base scenario configuration (YAML or JSON)")
    sweep.add_argument("--axis", default=None, help="Swept parameter: ell, gamma or g (default: sweep.axis)")
    sweep.add_argument("--values", default=None, help="Comma-separated values, e.g. -10,-100,-1000")
    sweep.add_argument("--couple-gamma", action="store_true", help="Set gamma = |value| at every point")
    sweep.add_argument("--threads", type=int, default=None, help="Worker threads (default: CRMLAB_THREADS or sweep.threads)")

    report = sub.add_parser("report", help="Summarize every certificates.json under a directory")
    report.add_argument("directory", help="Output directory to scan")
    return parser


def summarize(directory, out=sys.stdout):
    """Prints one row per run found under directory; True iff every run passed."""
    rows = []
    for root, dirs, files in os.walk(directory):
        dirs.sort()
        if CERTIFICATES_FILE in files:
            path = os.path.join(root, CERTIFICATES_FILE)
            with open(path, "r") as f:
                data = json.load(f)
            certs = data.get("certificates", [])
            enforced = [c for c in certs if c.get("kind") == "exact"]
            failed = [c["name"] for c in enforced if not c.get("pass")]
            rows.append((os.path.relpath(root, directory), data.get("family", "?"), len(enforced) - len(failed),
                         len(enforced), bool(data.get("passed")), failed))
    if not rows:
        print(f"No {CERTIFICATES_FILE} found under {directory}", file=out)
        return False
    width = max(len(r[0]) for r in rows)
    print(f"{'run'.ljust(width)}  {'family':<13} {'exact':>9}  status", file=out)
    for name, family, ok, total, passed, failed in rows:
        status = "PASS" if passed else "FAIL " + ",".join(failed)
        print(f"{name.ljust(width)}  {family:<13} {f'{ok}/{total}':>9}  {status}", file=out)
    return all(r[4] for r in rows)


def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.command == "report":
        logging.basicConfig(level=getattr(logging, (args.log_level or "WARNING").upper(), logging.WARNING))
        if not os.path.isdir(args.directory):
            logger.error(f"Not a directory: {args.directory}")
            return EXIT_CONFIG
        return EXIT_OK if summarize(args.directory) else EXIT_FAILED

    # 1. Load Configuration
    try:
        config = load_config(args.config)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    # 2. Setup Logging (must be done after config is loaded)
    setup_logging(config, args.log_level)
    logger.info("crmlab starting...")
    logger.info(f"Using configuration file: {os.path.abspath(args.config)}")
    logger.debug(f"Loaded configuration: {config}")

    # 3. Initialize Core Components
    file_system_manager = FileSystemManager(config)
    experiment_runner = ExperimentRunner(config, file_system_manager)

    # 4. Run
    try:
        if args.command == "run":
            result = experiment_runner.run_config(config)
            logger.info(f"Run {result.name} finished with status {result.status}")
            return EXIT_OK if result.passed else EXIT_FAILED

        sweep_cfg = config.get("sweep", {})
        axis = args.axis or sweep_cfg.get("axis", "ell")
        if args.values is not None:
            values = parse_values(args.values)
        else:
            values = [float(v) for v in sweep_cfg.get("values") or []]
            if not values:
                raise ConfigError("sweep.values: give --values or set sweep.values in the configuration")
        couple_gamma = args.couple_gamma or bool(sweep_cfg.get("couple_gamma", False))
        threads = thread_limit(config, args.threads)
        sweep_runner = SweepRunner(config, file_system_manager, experiment_runner, threads)
        manifest = sweep_runner.run(config, axis, values, couple_gamma)
        if manifest["fit"]:
            logger.info(f"Peaking exponent: {manifest['fit']['exponent']:.4f}")
        return EXIT_OK if manifest["passed"] else EXIT_FAILED
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except CrmlabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILED
    except KeyboardInterrupt:
        logger.info("Keyboard interrupt received. Shutting down...")
        return EXIT_FAILED
    finally:
        logger.info("crmlab finished.")


if __name__ == "__main__":
    sys.exit(main())
