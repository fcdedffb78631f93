"""Command line entry point: ``semantic-memory <subcommand> ...``.

Exit status is 0 on success, 1 on validation errors (bad input, bad config,
incompatible artifacts) and 2 on I/O errors (missing files or artifacts).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import ArtifactVersionError, SemanticMemoryError, ValidationError
from .pipeline import RunConfig, cmd_eval, cmd_predict, cmd_train_spatial, cmd_train_temporal

log = logging.getLogger("semantic_memory")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--seed", type=int, help="seed for both spatial and temporal training")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semantic-memory", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-spatial", help="learn the spatial grammar and event catalog")
    _common(p)
    p.add_argument("scenarios", nargs="+")

    p = sub.add_parser("train-temporal", help="learn the temporal PCFG and episodic store")
    _common(p)
    p.add_argument("--spatial", help="directory with spatial artifacts (default: --out)")
    p.add_argument("scenarios", nargs="+")

    p = sub.add_parser("predict", help="label steps and predict episode completions")
    _common(p)
    p.add_argument("--artifacts", help="directory with trained artifacts (default: --out)")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--quiet", action="store_true", help="do not echo reports to stdout")
    p.add_argument("scenario")

    p = sub.add_parser("eval", help="reproduce event counts and property checks on fixtures")
    _common(p)
    p.add_argument("--artifacts", help="directory holding <scenario id>/ artifact subdirectories")
    p.add_argument("scenarios", nargs="+")
    return parser


def _config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    return config.with_seed(args.seed)


def run(args) -> int:
    config = _config(args)
    if args.command == "train-spatial":
        phase = cmd_train_spatial(args.scenarios, config, args.out)
        log.info("spatial grammar: %d iterations, %d event classes", len(phase.history), len(phase.catalog))
    elif args.command == "train-temporal":
        phase = cmd_train_temporal(args.scenarios, config, args.out, args.spatial)
        log.info("temporal PCFG: %d iterations, %d stored episodes", len(phase.history), len(phase.store))
    elif args.command == "predict":
        stream = None if args.quiet else sys.stdout
        cmd_predict(args.scenario, config, args.out, args.artifacts, args.split, stream)
    elif args.command == "eval":
        report = cmd_eval(args.scenarios, config, args.out, args.artifacts)
        for sc in report["scenarios"]:
            counts = sc["counts"]
            print(f"{sc['scenario']}: {counts['event_classes']} event classes, {counts['generated_at_test']} generated at test")
            for name, check in sc["checks"].items():
                print(f"  {'PASS' if check['passed'] else 'FAIL'}  {name}")
        return 0 if report["passed"] else 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the final flush
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1
    except (ValidationError, ArtifactVersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SemanticMemoryError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
