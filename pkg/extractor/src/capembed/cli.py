"""Extractor command line: batch extraction and the HTTP service."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from .config import ExtractorConfig, ExtractorError


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--llm", default="Qwen/Qwen2.5-3B", help="LLM id, or 'tiny'")
    p.add_argument("--clip", default="tiny", help="contrastive encoder id, or 'tiny'")
    p.add_argument("--device", default="cpu")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0, help="tiny-mode init seed")
    p.add_argument(
        "--no-chat-template",
        action="store_true",
        help="use the plain role-layout instead of the model's chat template",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capembed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-r2c", help="pool prompt hidden states to a file")
    _add_model_args(p)
    p.add_argument("--prompts", required=True, help="prompt dump JSONL")
    p.add_argument("--out", required=True, help="output embedding file")

    p = sub.add_parser("extract-i2c", help="embed images and candidate captions")
    _add_model_args(p)
    p.add_argument("--dataset", required=True, help="benchmark JSONL")
    p.add_argument("--out", required=True, help="output embedding file")

    p = sub.add_parser("serve", help="run the embedding HTTP service")
    _add_model_args(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8752)
    p.add_argument("--queue-limit", type=int, default=8)
    return parser


def _config_from(args: argparse.Namespace) -> ExtractorConfig:
    return ExtractorConfig(
        llm_model=args.llm,
        clip_model=args.clip,
        device=args.device,
        batch_size=args.batch_size,
        seed=args.seed,
        apply_chat_template=not args.no_chat_template,
        max_queue=getattr(args, "queue_limit", 8),
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    config = _config_from(args)
    try:
        if args.command == "extract-r2c":
            from .r2c import extract_r2c

            result = extract_r2c(config, args.prompts, args.out)
        elif args.command == "extract-i2c":
            from .i2c import extract_i2c

            result = extract_i2c(config, args.dataset, args.out)
        else:
            from .service import serve

            serve(config, host=args.host, port=args.port)
            return 0
    except ExtractorError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    json.dump(result, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
