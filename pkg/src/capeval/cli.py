"""Command-line interface.

Every subcommand accepts --config <path> (TOML or JSON) plus flag
overrides; flags win over the file, and EMBED_ENDPOINT wins over the
file's endpoint. Exit codes: 0 success, 1 validation error, 2 partial
data failure, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from . import harness
from .config import load_run_config
from .errors import PartialDataError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PARTIAL = 2
EXIT_INTERNAL = 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--dataset", help="benchmark JSONL path")
    p.add_argument("--output-dir", dest="output_dir", help="report directory")
    p.add_argument(
        "--mode",
        choices=("per_perspective", "shared_prompt", "single_score"),
        help="head mode",
    )
    p.add_argument(
        "--reference-free",
        dest="reference_free",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="render prompts without the reference block",
    )
    p.add_argument(
        "--embeddings", nargs="+", help="embedding store file(s)"
    )
    p.add_argument("--endpoint", help="embedding service URL")
    p.add_argument("--checkpoint", help="head checkpoint path")
    p.add_argument("--split", help="restrict to one split tag")
    p.add_argument(
        "--use-r2c",
        dest="use_r2c",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="enable/disable the language branch (ablation)",
    )
    p.add_argument(
        "--use-i2c",
        dest="use_i2c",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="enable/disable the alignment branch (ablation)",
    )
    p.add_argument(
        "--figures",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="render PNG figures next to reports",
    )
    p.add_argument("--d-llm", dest="d_llm", type=int, help="language embedding dim")
    p.add_argument("--d-clip", dest="d_clip", type=int, help="alignment embedding dim")
    p.add_argument("--seed", type=int, help="training seed override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capeval",
        description="Train, run, and benchmark a long-caption evaluation metric.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("ingest", "validate a dataset and write its normalized form"),
        ("dump-prompts", "write the extractor prompt dump"),
        ("train", "train the scoring head"),
        ("score", "score samples with a checkpoint or a baseline"),
        ("evaluate", "correlate scores with human judgments"),
        ("failures", "list samples with |human - predicted| >= theta"),
        ("bench", "measure per-sample latency spans"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "score":
            p.add_argument(
                "--baseline",
                choices=("bleu", "avg_cosine"),
                help="score with a baseline instead of the learned head",
            )
        if name == "evaluate":
            p.add_argument("--scores", required=True, help="score JSONL to evaluate")
            p.add_argument(
                "--compare", help="second score JSONL for significance tests"
            )
            p.add_argument(
                "--resamples", type=int, help="bootstrap resample count"
            )
        if name == "failures":
            p.add_argument("--scores", required=True, help="score JSONL to analyze")
            p.add_argument(
                "--categories", help="JSON side-file of manual failure labels"
            )
            p.add_argument("--theta", type=float, help="failure threshold")
        if name == "bench":
            p.add_argument(
                "--repetitions", type=int, help="measurement repetitions"
            )
    return parser


def _overrides_from(args: argparse.Namespace) -> dict:
    keys = (
        "dataset",
        "output_dir",
        "mode",
        "reference_free",
        "endpoint",
        "checkpoint",
        "split",
        "use_r2c",
        "use_i2c",
        "figures",
        "d_llm",
        "d_clip",
    )
    overrides: dict = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "embeddings", None):
        overrides["embeddings"] = args.embeddings
    if getattr(args, "theta", None) is not None:
        overrides["theta"] = args.theta
    if getattr(args, "repetitions", None) is not None:
        overrides["latency_repetitions"] = args.repetitions
    if getattr(args, "resamples", None) is not None:
        overrides["significance_resamples"] = args.resamples
    train_over = {}
    if getattr(args, "seed", None) is not None:
        train_over["seed"] = args.seed
    if train_over:
        overrides["train"] = train_over
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config, _overrides_from(args))
        if args.command == "ingest":
            result = harness.run_ingest(config)
        elif args.command == "dump-prompts":
            result = harness.run_dump_prompts(config)
        elif args.command == "train":
            result = harness.run_train(config)
        elif args.command == "score":
            result = harness.run_score(config, baseline=args.baseline)
        elif args.command == "evaluate":
            result = harness.run_evaluate(
                config, args.scores, compare_path=args.compare
            ).as_dict()
        elif args.command == "failures":
            result = harness.run_failures(
                config, args.scores, categories_path=args.categories
            ).as_dict()
        elif args.command == "bench":
            result = harness.run_bench(config)
        else:  # pragma: no cover - argparse enforces choices
            raise ValidationError(f"unknown command {args.command!r}")
    except PartialDataError as e:
        print(f"partial failure: {e}", file=sys.stderr)
        for line in e.failures:
            print(f"  {line}", file=sys.stderr)
        return EXIT_PARTIAL
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001 - map anything else to exit 3
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL

    json.dump(result, sys.stdout, indent=2, sort_keys=True, default=str)
    print()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
