"""Byte-level tokenizer for the tiny test backbones.

UTF-8 bytes map to ids 0..255; 256 is end-of-text, 257 is padding.
No merges, no special handling: deterministic and download-free.
"""

from __future__ import annotations

import torch

VOCAB_SIZE = 258
EOS_ID = 256
PAD_ID = 257


def encode(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def pad_batch(
    sequences: list[list[int]], pad_id: int = PAD_ID
) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad to the longest sequence; returns (input_ids, attention_mask)."""
    width = max(len(s) for s in sequences)
    ids = torch.full((len(sequences), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(sequences), width), dtype=torch.long)
    for i, seq in enumerate(sequences):
        ids[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        mask[i, : len(seq)] = 1
    return ids, mask
