import argparse
import asyncio
import json
import logging
import sys

from . import __version__
from .diagnostics import CHECKS
from .errors import ConfigError, DalembertError
from .runner import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_INTEGRATION, EXIT_OK, ScenarioRunner
from .scenario import SYSTEMS, Scenario, bundled_scenarios

REQUIRED_PACKAGES = ["numpy", "scipy", "yaml"]


def check_packages(packages):
    for package in packages:
        try:
            print(package, ": ", __import__(package).__version__)
        except ImportError:
            print(package, ": Not found!")


def run_one(command, configfile, seed=None, output_dir=None, configure_logging=True, scenario=None):
    """Run one scenario file, or the already loaded ``scenario``; returns its exit code."""
    logger = logging.getLogger(__name__)
    try:
        if scenario is None:
            scenario = Scenario(configfile, seed=seed, output_dir=output_dir, configure_logging=configure_logging)
    except ConfigError as e:
        logger.error("%s: %s", configfile, e)
        print(f"{configfile}: config error at {e}", file=sys.stderr)
        return EXIT_CONFIG

    runner = ScenarioRunner(scenario)
    try:
        outcome = runner.simulate() if command == "simulate" else runner.verify()
    except DalembertError as e:
        logger.error("%s: %s", configfile, e)
        print(f"{configfile}: {e.kind}: {e}", file=sys.stderr)
        return EXIT_INTEGRATION

    if outcome.exit_code == EXIT_INTEGRATION:
        error = outcome.trajectory.error
        print(
            f"{configfile}: {error.kind} after t={outcome.trajectory.final.t!r}: {error}",
            file=sys.stderr,
        )
    elif outcome.exit_code == EXIT_CHECK_FAILED:
        print(f"{configfile}: failed checks: {', '.join(outcome.report.failed())}", file=sys.stderr)
    return outcome.exit_code


async def run_scenarios(command, configfiles, jobs=1, seed=None, output_dir=None):
    """
    Fan the scenario files over worker threads, at most ``jobs`` at a time. Concurrent runs
    share the package logger, so only the logging section of the first file is applied.
    """
    logger = logging.getLogger(__name__)
    loop = asyncio.get_running_loop()
    sem = asyncio.Semaphore(max(1, jobs))
    shared_logging = jobs > 1 and len(configfiles) > 1
    prepared = {}
    if shared_logging:
        try:
            prepared[0] = Scenario(configfiles[0], seed=seed, output_dir=output_dir, configure_logging=False)
            prepared[0].setup_logging()
        except ConfigError:
            pass  # reported by its own run
        logger.info("%d scenarios with --jobs %d: logging set by %s", len(configfiles), jobs, configfiles[0])

    async def sem_task(index, configfile):
        async with sem:
            logger.debug_detailed("starting %s %s", command, configfile)
            return await loop.run_in_executor(
                None, run_one, command, configfile, seed, output_dir, not shared_logging, prepared.get(index)
            )

    results = await asyncio.gather(*(sem_task(i, c) for i, c in enumerate(configfiles)), return_exceptions=True)
    codes = []
    for configfile, result in zip(configfiles, results):
        if isinstance(result, BaseException):
            logger.error("%s: unexpected error: %s", configfile, result)
            print(f"{configfile}: unexpected error: {result}", file=sys.stderr)
            codes.append(EXIT_INTEGRATION)
        else:
            codes.append(result)
    return max(codes, default=EXIT_OK)


def list_registry(as_json=False):
    registry = {"systems": SYSTEMS, "checks": CHECKS, "scenarios": bundled_scenarios()}
    if as_json:
        print(json.dumps(registry, indent=2))
        return EXIT_OK
    print("systems:")
    for name, entry in SYSTEMS.items():
        print(f"  {name}: {entry['description']}")
        print(f"    parameters: {', '.join(entry['parameters'])}")
        print(f"    observers: {', '.join(entry['observers'])}")
    print("checks:")
    for name, description in CHECKS.items():
        print(f"  {name}: {description}")
    print("scenarios:")
    for name in registry["scenarios"]:
        print(f"  {name}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", default=argparse.SUPPRESS, help="directory for CSV and JSON output")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the scenario seed")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="scenarios run concurrently")

    parser = argparse.ArgumentParser(prog="dalembert", description="constrained dynamics by the reaction formula")
    parser.add_argument("-v", "--version", help="print version information", action="store_true")
    parser.add_argument("--output-dir", default=None, help="directory for CSV and JSON output")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    parser.add_argument("--jobs", type=int, default=1, help="scenarios run concurrently")
    commands = parser.add_subparsers(dest="command")

    simulate = commands.add_parser("simulate", parents=[common], help="integrate and write the trajectory")
    simulate.add_argument("configfile", nargs="+", help="/path/to/scenario.yaml or a bundled scenario name")
    verify = commands.add_parser("verify", parents=[common], help="integrate and run the check suite")
    verify.add_argument("configfile", nargs="+", help="/path/to/scenario.yaml or a bundled scenario name")
    listing = commands.add_parser("list", help="built-in systems, checks and scenarios")
    listing.add_argument("--json", action="store_true", help="machine-readable output")
    return parser


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, format="%(asctime)s %(levelname)s [%(filename)s:%(lineno)d] %(message)s")
    logger = logging.getLogger(__name__)
    logger.debug("starting %s", sys.argv if argv is None else argv)

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        print("dalembert version: ", __version__)
        print("\nChecking required packages......")
        check_packages(REQUIRED_PACKAGES)
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    if args.command == "list":
        return list_registry(args.json)
    if args.jobs < 1:
        print("--jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return asyncio.run(run_scenarios(args.command, args.configfile, args.jobs, args.seed, args.output_dir))


if __name__ == "__main__":
    sys.exit(main())
