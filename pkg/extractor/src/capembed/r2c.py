"""Prompt batch extraction: hidden-state pooling to the embedding file."""

from __future__ import annotations

import logging
from pathlib import Path

from .backbones import LanguageBackbone
from .config import ExtractorConfig, ExtractorError
from .embfile import R2CRecord, write_embedding_file
from .promptdump import read_prompt_dump

logger = logging.getLogger(__name__)


def extract_r2c(
    config: ExtractorConfig,
    prompts_path: str | Path,
    out_path: str | Path,
    backbone: LanguageBackbone | None = None,
) -> dict:
    """Run one forward pass per prompt batch and persist pooled states.

    Prompts that exceed the model context are reported per prompt (all of
    them, before anything is written) rather than silently truncated.
    """
    lines = read_prompt_dump(prompts_path)
    backbone = backbone or LanguageBackbone(config)
    texts = [
        backbone.render(l.system, l.user, l.assistant_prefix) for l in lines
    ]

    too_long = []
    for line, text in zip(lines, texts):
        n = backbone.token_count(text)
        if n > backbone.max_length:
            too_long.append(
                f"({line.sample_id}, {line.perspective}): {n} tokens > "
                f"context {backbone.max_length}"
            )
    if too_long:
        raise ExtractorError(
            "prompts exceed the model context:\n  " + "\n  ".join(too_long)
        )

    pooled = backbone.pool_batch(texts)
    records = [
        R2CRecord(
            sample_id=line.sample_id,
            perspective=line.perspective,
            mean=state.mean,
            last=state.last,
            seq_len=state.seq_len,
            digest=line.digest,
        )
        for line, state in zip(lines, pooled)
    ]
    write_embedding_file(
        out_path, records, [], normalized=False, expect_r2c_dim=backbone.hidden_size
    )
    logger.info("wrote %d pooled records to %s", len(records), out_path)
    return {
        "records": len(records),
        "dim": backbone.hidden_size,
        "output": str(out_path),
    }
