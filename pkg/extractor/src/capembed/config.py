"""Extractor configuration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


class ExtractorError(Exception):
    """Base error for extraction failures."""


@dataclass
class ExtractorConfig:
    """Backbone selection and batching.

    `llm_model` / `clip_model` take hub identifiers, or the literal
    string "tiny" for seeded random-weight miniature architectures used
    in CI (no download, same code paths).
    """

    llm_model: str = "Qwen/Qwen2.5-3B"
    clip_model: str = "tiny"
    device: str = "cpu"
    batch_size: int = 8
    seed: int = 0
    apply_chat_template: bool = True
    max_queue: int = 8
    # Overrides mainly for tests; None means "use the model's limit".
    max_length: Optional[int] = None
    max_text_tokens: Optional[int] = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ExtractorError("batch_size must be >= 1")
        if self.max_queue < 1:
            raise ExtractorError("max_queue must be >= 1")


def tiny_config(**overrides) -> ExtractorConfig:
    defaults = dict(llm_model="tiny", clip_model="tiny", batch_size=8, seed=0)
    defaults.update(overrides)
    return ExtractorConfig(**defaults)
