"""Shared fixtures: synthetic benchmark files and embedding stores."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from capeval.dataset import Split
from capeval.perspective import SHARED
from capeval.prompts import prompt_digest, render_prompt
from capeval.store import R2CRecord, VecKind, VecRecord, write_embeddings

D_LLM = 4
D_CLIP = 3


def make_sample_obj(i: int, split: str) -> dict:
    # Judgments cycle through all five levels with different strides so
    # every split of >= 4 samples has diverse values per perspective.
    return {
        "id": f"s{i:03d}",
        "image": f"images/{i:03d}.jpg",
        "references": [
            f"A long reference caption number one for image {i}.",
            f"A second long reference caption for image {i}.",
        ],
        "candidate": f"A generated caption describing scene {i} in detail.",
        "generator": f"model-{i % 3}",
        "split": split,
        "judgments": {
            "desc": (i % 5) / 4,
            "rel": ((2 * i + 1) % 5) / 4,
            "flu": ((3 * i + 2) % 5) / 4,
        },
    }


def write_benchmark(
    path: Path,
    n_train: int = 6,
    n_val: int = 4,
    n_test_a: int = 4,
    n_test_b: int = 0,
) -> list[dict]:
    objs = []
    i = 0
    for split, count in (
        ("train", n_train),
        ("val", n_val),
        ("testA", n_test_a),
        ("testB", n_test_b),
    ):
        for _ in range(count):
            objs.append(make_sample_obj(i, split))
            i += 1
    with path.open("w", encoding="utf-8") as f:
        for obj in objs:
            f.write(json.dumps(obj) + "\n")
    return objs


def write_store_for(
    path: Path,
    objs: list[dict],
    mode: str = "per_perspective",
    reference_free: bool = False,
    d_llm: int = D_LLM,
    d_clip: int = D_CLIP,
    seed: int = 5,
) -> None:
    """Embedding file covering every sample in `objs`, digests included."""
    rng = np.random.default_rng(seed)
    tags = ("desc", "rel", "flu") if mode == "per_perspective" else (SHARED,)
    records = []
    for obj in objs:
        for tag in tags:
            prompt = render_prompt(
                tag,
                obj["references"],
                obj["candidate"],
                reference_free=reference_free,
                sample_id=obj["id"],
            )
            records.append(
                R2CRecord(
                    sample_id=obj["id"],
                    perspective=tag,
                    mean_vec=rng.standard_normal(d_llm).astype(np.float32),
                    last_vec=rng.standard_normal(d_llm).astype(np.float32),
                    seq_len=int(rng.integers(5, 40)),
                    prompt_digest=prompt_digest(prompt),
                )
            )
        for kind in (VecKind.IMAGE, VecKind.CANDIDATE_TEXT):
            vec = rng.standard_normal(d_clip)
            vec = (vec / np.linalg.norm(vec)).astype(np.float32)
            records.append(
                VecRecord(
                    sample_id=obj["id"], kind=kind, vec=vec, normalized=True
                )
            )
    write_embeddings(path, records)


@pytest.fixture
def benchmark(tmp_path):
    """(dataset path, sample objects) for a small mixed-split benchmark."""
    path = tmp_path / "bench.jsonl"
    objs = write_benchmark(path)
    return path, objs


@pytest.fixture
def fixture_env(tmp_path, benchmark):
    """Dataset + matching embedding store + output dir."""
    dataset_path, objs = benchmark
    store_path = tmp_path / "emb.bin"
    write_store_for(store_path, objs)
    out_dir = tmp_path / "out"
    return {
        "dataset": dataset_path,
        "store": store_path,
        "objs": objs,
        "out_dir": out_dir,
        "tmp_path": tmp_path,
    }


__all__ = [
    "D_LLM",
    "D_CLIP",
    "make_sample_obj",
    "write_benchmark",
    "write_store_for",
    "Split",
]
