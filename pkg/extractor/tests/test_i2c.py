"""Alignment-branch extraction: normalization and long-text handling."""

from __future__ import annotations

import json

import numpy as np
import pytest

from capembed.config import ExtractorError, tiny_config
from capembed.embfile import KIND_IMAGE, KIND_TEXT, read_embedding_file
from capembed.i2c import extract_i2c
from conftest import write_dataset, write_image


class TestExtract:
    def test_records_per_sample(self, tmp_path, alignment_backbone):
        dataset = tmp_path / "d.jsonl"
        write_dataset(dataset, tmp_path, n=3)
        out = tmp_path / "emb.bin"
        summary = extract_i2c(tiny_config(), dataset, out, backbone=alignment_backbone)
        assert summary["records"] == 6
        header, _, vecs = read_embedding_file(out)
        assert header["normalized"] is True
        kinds = {(v.sample_id, v.kind) for v in vecs}
        assert ("s000", KIND_IMAGE) in kinds and ("s000", KIND_TEXT) in kinds

    def test_unit_norms(self, tmp_path, alignment_backbone):
        dataset = tmp_path / "d.jsonl"
        write_dataset(dataset, tmp_path, n=4)
        out = tmp_path / "emb.bin"
        extract_i2c(tiny_config(), dataset, out, backbone=alignment_backbone)
        _, _, vecs = read_embedding_file(out)
        for v in vecs:
            assert abs(float(np.linalg.norm(v.vec.astype(np.float64))) - 1.0) < 1e-3

    def test_same_image_same_vector(self, tmp_path, alignment_backbone):
        img = write_image(tmp_path / "img.png", seed=5)
        rows = [
            {"id": "a", "image": str(img), "candidate": "caption one"},
            {"id": "b", "image": str(img), "candidate": "caption two"},
        ]
        dataset = tmp_path / "d.jsonl"
        dataset.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        out = tmp_path / "emb.bin"
        extract_i2c(tiny_config(), dataset, out, backbone=alignment_backbone)
        _, _, vecs = read_embedding_file(out)
        imgs = {v.sample_id: v for v in vecs if v.kind == KIND_IMAGE}
        assert imgs["a"].vec.tobytes() == imgs["b"].vec.tobytes()

    def test_long_caption_embeds_without_failure(self, tmp_path, alignment_backbone):
        # 150-word captions exceed a 77-token window by far; the long-text
        # encoder must embed them untruncated.
        img = write_image(tmp_path / "img.png", seed=6)
        caption = " ".join(f"word{k}" for k in range(150))
        dataset = tmp_path / "d.jsonl"
        dataset.write_text(
            json.dumps({"id": "a", "image": str(img), "candidate": caption}) + "\n"
        )
        out = tmp_path / "emb.bin"
        summary = extract_i2c(tiny_config(), dataset, out, backbone=alignment_backbone)
        assert summary["truncated_captions"] == 0

    def test_over_limit_truncates_with_warning(self, tmp_path, caplog):
        config = tiny_config(max_text_tokens=32)
        img = write_image(tmp_path / "img.png", seed=7)
        dataset = tmp_path / "d.jsonl"
        dataset.write_text(
            json.dumps(
                {"id": "a", "image": str(img), "candidate": "x" * 500}
            )
            + "\n"
        )
        out = tmp_path / "emb.bin"
        with caplog.at_level("WARNING"):
            summary = extract_i2c(config, dataset, out)
        assert summary["truncated_captions"] == 1
        assert any("truncat" in m for m in caplog.messages)

    def test_unreadable_image_rejected(self, tmp_path, alignment_backbone):
        bad = tmp_path / "broken.png"
        bad.write_bytes(b"not an image")
        dataset = tmp_path / "d.jsonl"
        dataset.write_text(
            json.dumps({"id": "a", "image": str(bad), "candidate": "c"}) + "\n"
        )
        with pytest.raises(ExtractorError, match="unreadable"):
            extract_i2c(tiny_config(), dataset, tmp_path / "e.bin",
                        backbone=alignment_backbone)

    def test_missing_image_rejected(self, tmp_path, alignment_backbone):
        dataset = tmp_path / "d.jsonl"
        dataset.write_text(
            json.dumps({"id": "a", "image": "/nope/img.png", "candidate": "c"}) + "\n"
        )
        with pytest.raises(ExtractorError, match="unreadable"):
            extract_i2c(tiny_config(), dataset, tmp_path / "e.bin",
                        backbone=alignment_backbone)
