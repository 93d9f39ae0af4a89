"""Fixtures: prompt dumps, tiny datasets with real image files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from capembed.config import tiny_config


def prompt_line(i: int, perspective: str = "desc", words: int = 12) -> dict:
    body = " ".join(f"word{i}_{k}" for k in range(words))
    return {
        "sample_id": f"s{i:03d}",
        "perspective": perspective,
        "system": f"Rate the caption. Criterion {perspective}. Only give a number "
        "from 1 to 5 with no text.",
        "user": f"Reference Captions: 1. {body}\nCandidate Caption: candidate {i}",
        "assistant_prefix": "Score:",
        "digest": 1000 + i,
    }


def write_prompt_dump(path: Path, lines: list[dict]) -> Path:
    with path.open("w", encoding="utf-8") as f:
        for line in lines:
            f.write(json.dumps(line) + "\n")
    return path


def write_image(path: Path, seed: int, size: int = 48) -> Path:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)
    return path


def write_dataset(path: Path, tmp_path: Path, n: int = 3, caption_words: int = 20):
    rows = []
    for i in range(n):
        img = write_image(tmp_path / f"img{i}.png", seed=i)
        rows.append(
            {
                "id": f"s{i:03d}",
                "image": str(img),
                "candidate": " ".join(f"token{i}_{k}" for k in range(caption_words)),
                "references": ["unused here"],
                "generator": "m",
                "split": "train",
            }
        )
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    return rows


@pytest.fixture(scope="session")
def shared_tiny_config():
    return tiny_config()


@pytest.fixture(scope="session")
def language_backbone(shared_tiny_config):
    from capembed.backbones import LanguageBackbone

    return LanguageBackbone(shared_tiny_config)


@pytest.fixture(scope="session")
def alignment_backbone(shared_tiny_config):
    from capembed.backbones import AlignmentBackbone

    return AlignmentBackbone(shared_tiny_config)
