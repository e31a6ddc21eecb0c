import argparse
import json
import os
import re
import sys
from dataclasses import asdict, replace

from dotenv import load_dotenv

# Add the project root to the python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

# Settings and the logger read the environment at import time
load_dotenv()

from core.config import ExperimentConfig  # noqa: E402
from core.experiments import EXPERIMENT_REGISTRY  # noqa: E402
from core.logger import logger  # noqa: E402
from core.orchestrator import Orchestrator  # noqa: E402
from core.state import RunState  # noqa: E402
from sio.errors import AnisoError  # noqa: E402
from sio.kernel import BUILTIN_KERNELS, builtin, validate  # noqa: E402

# Maximum allowed length for a run name
_MAX_NAME_LEN = 200

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2


def slugify(text: str) -> str:
    """
    Convert a human run name into a safe report file stem.
    'CZ2 on the fine grid' -> 'cz2_on_the_fine_grid'
    """
    text = text.strip().lower()
    text = re.sub(r'[^\w\s-]', '', text)       # strip special chars
    text = re.sub(r'[\s\-]+', '_', text)        # spaces/hyphens -> underscores
    text = re.sub(r'_+', '_', text).strip('_')  # collapse duplicates
    return text[:80]                             # cap at 80 chars


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aniso-sio",
        description="Numerical verification of singular integral operators and commutators "
                    "on anisotropic Morrey spaces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment or all of them and write a report")
    run.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    run.add_argument("--experiment", help="override the configured experiment")
    run.add_argument("--seed", type=int, help="override the configured seed")
    run.add_argument("--name", help="report file stem, slugified")
    run.add_argument("--output-dir", help="report directory (default: ANISO_SIO_OUTPUT_DIR or ./reports)")

    sub.add_parser("list-experiments", help="list the experiment names")

    vk = sub.add_parser("validate-kernel", help="run the kernel axiom checks on a built-in kernel")
    vk.add_argument("--name", required=True, choices=BUILTIN_KERNELS)
    vk.add_argument("--seed", type=int, default=0)
    return parser


def _run(args) -> int:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.experiment:
        overrides["experiment"] = args.experiment
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.name:
        if len(args.name) > _MAX_NAME_LEN:
            print(f"Error: name too long (max {_MAX_NAME_LEN} chars, got {len(args.name)}).")
            return EXIT_ERROR
        stem = slugify(args.name)
        if not stem:
            print("Error: name has no usable characters.")
            return EXIT_ERROR
        overrides["output"] = f"{stem}.json"
    if overrides:
        config = replace(config, **overrides)

    report, path = Orchestrator(args.output_dir).run(config)
    failed = report.failed()
    print(f"\nReport: {path}")
    print(f"Checks: {len(report.records) - len(failed)}/{len(report.records)} passed")
    for name, tally in RunState.get_snapshot()["experiments"].items():
        print(f"  {name:24s} {tally['passed']}/{tally['checks']} passed, {tally['errors']} raised, "
              f"{tally['runtime_s']:.1f}s")
    for r in failed:
        print(f"  FAIL {r.experiment}/{r.check_id}: {r.detail}")
    return EXIT_OK if not failed else EXIT_FAILED


def _list_experiments() -> int:
    for name, (description, _) in EXPERIMENT_REGISTRY.items():
        print(f"{name:24s} {description}")
    return EXIT_OK


def _validate_kernel(args) -> int:
    report = validate(builtin(args.name), seed=args.seed)
    print(json.dumps(asdict(report), indent=2))
    return EXIT_OK if report.passed else EXIT_FAILED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "list-experiments":
            return _list_experiments()
        return _validate_kernel(args)
    except AnisoError as e:
        logger.error(f"Execution failed: {e}")
        print(f"Error: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
