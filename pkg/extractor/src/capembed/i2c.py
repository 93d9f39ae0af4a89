"""Image and candidate-text embedding extraction."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .backbones import AlignmentBackbone, open_image
from .config import ExtractorConfig, ExtractorError
from .embfile import KIND_IMAGE, KIND_TEXT, VectorRecord, write_embedding_file

logger = logging.getLogger(__name__)


def read_samples(dataset_path: str | Path) -> list[dict]:
    """Minimal benchmark JSONL reader: id, image, candidate per line."""
    path = Path(dataset_path)
    if not path.is_file():
        raise ExtractorError(f"dataset not found: {path}")
    samples = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ExtractorError(f"{path}:{line_no}: malformed JSON: {e.msg}")
            for key in ("id", "image", "candidate"):
                if key not in obj:
                    raise ExtractorError(f"{path}:{line_no}: missing key {key!r}")
            samples.append(obj)
    return samples


def extract_i2c(
    config: ExtractorConfig,
    dataset_path: str | Path,
    out_path: str | Path,
    backbone: AlignmentBackbone | None = None,
) -> dict:
    """Unit-normalized image and candidate embeddings for every sample."""
    samples = read_samples(dataset_path)
    backbone = backbone or AlignmentBackbone(config)

    images = [open_image(s["image"]) for s in samples]
    image_vecs = backbone.embed_images(images) if images else None
    text_vecs, truncated = backbone.embed_texts([s["candidate"] for s in samples])

    records = []
    for i, s in enumerate(samples):
        records.append(VectorRecord(s["id"], KIND_IMAGE, image_vecs[i]))
        records.append(VectorRecord(s["id"], KIND_TEXT, text_vecs[i]))
    write_embedding_file(
        out_path, [], records, normalized=True, expect_i2c_dim=backbone.dim
    )
    if truncated:
        logger.warning("%d captions were truncated to the text limit", truncated)
    return {
        "records": len(records),
        "dim": backbone.dim,
        "truncated_captions": truncated,
        "output": str(out_path),
    }
