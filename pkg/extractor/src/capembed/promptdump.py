"""Reader for the prompt-dump JSONL produced by the evaluation core."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .config import ExtractorError

REQUIRED_KEYS = ("sample_id", "perspective", "system", "user", "assistant_prefix", "digest")
VALID_PERSPECTIVES = {"desc", "rel", "flu", "shared"}


@dataclass(frozen=True)
class PromptLine:
    sample_id: str
    perspective: str
    system: str
    user: str
    assistant_prefix: str
    digest: int


def read_prompt_dump(path: str | Path) -> list[PromptLine]:
    path = Path(path)
    if not path.is_file():
        raise ExtractorError(f"prompt dump not found: {path}")
    lines: list[PromptLine] = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ExtractorError(f"{path}:{line_no}: malformed JSON: {e.msg}")
            for key in REQUIRED_KEYS:
                if key not in obj:
                    raise ExtractorError(f"{path}:{line_no}: missing key {key!r}")
            if obj["perspective"] not in VALID_PERSPECTIVES:
                raise ExtractorError(
                    f"{path}:{line_no}: unknown perspective {obj['perspective']!r}"
                )
            lines.append(
                PromptLine(
                    sample_id=obj["sample_id"],
                    perspective=obj["perspective"],
                    system=obj["system"],
                    user=obj["user"],
                    assistant_prefix=obj["assistant_prefix"],
                    digest=int(obj["digest"]),
                )
            )
    return lines
