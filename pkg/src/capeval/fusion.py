"""Feature algebra: hidden-state pooling and image-caption alignment.

The language branch summarizes a hidden-state sequence as
[mean(h_1..h_M), h_M]; the alignment branch compares image and caption
embeddings as [|img - cand|, img * cand]. Scores are produced by a head
over the concatenation. Either branch can be disabled for ablations, in
which case its segment has length zero.

All arithmetic is float64; float32 appears only at file boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, ValidationError
from .perspective import perspective_tag
from .store import R2CRecord


@dataclass(frozen=True)
class FusionConfig:
    """Dimensions and branch toggles for feature assembly."""

    d_llm: int = 2048
    d_clip: int = 768
    use_r2c: bool = True
    use_i2c: bool = True

    def __post_init__(self) -> None:
        if not (self.use_r2c or self.use_i2c):
            raise ValidationError("at least one branch must be enabled")
        if self.use_r2c and self.d_llm <= 0:
            raise ValidationError("d_llm must be positive")
        if self.use_i2c and self.d_clip <= 0:
            raise ValidationError("d_clip must be positive")

    @property
    def r2c_len(self) -> int:
        return 2 * self.d_llm if self.use_r2c else 0

    @property
    def i2c_len(self) -> int:
        return 2 * self.d_clip if self.use_i2c else 0

    @property
    def fused_dim(self) -> int:
        return self.r2c_len + self.i2c_len


@dataclass(frozen=True)
class FusedFeature:
    """Concatenated branch features for one sample and one perspective."""

    g_r2c: np.ndarray
    g_i2c: np.ndarray
    concat: np.ndarray
    perspective: str


def _finite_f64(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a vector")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def pool_r2c(hidden_seq: Sequence[Sequence[float]]) -> np.ndarray:
    """[mean of the sequence, last element], length 2 * d_llm.

    The mean is accumulated in sequence order so it is reproducible
    against an elementwise in-order oracle.
    """
    if len(hidden_seq) == 0:
        raise ValidationError("hidden-state sequence is empty")
    rows = [_finite_f64(h, f"hidden_seq[{i}]") for i, h in enumerate(hidden_seq)]
    d = len(rows[0])
    if any(len(r) != d for r in rows):
        raise DimensionMismatchError("ragged hidden-state sequence")
    acc = np.zeros(d, dtype=np.float64)
    for r in rows:
        acc += r
    mean = acc / len(rows)
    return np.concatenate([mean, rows[-1]])


def pooled_from_record(record: R2CRecord) -> np.ndarray:
    """Pooled feature straight from a stored record: [mean_vec, last_vec]."""
    return np.concatenate(
        [
            np.asarray(record.mean_vec, dtype=np.float64),
            np.asarray(record.last_vec, dtype=np.float64),
        ]
    )


def i2c_features(h_img: Sequence[float], h_cand: Sequence[float]) -> np.ndarray:
    """[|img - cand|, img * cand] elementwise, length 2 * d_clip."""
    a = _finite_f64(h_img, "h_img")
    b = _finite_f64(h_cand, "h_cand")
    if len(a) != len(b):
        raise DimensionMismatchError(
            f"image/caption embedding dims differ: {len(a)} vs {len(b)}"
        )
    return np.concatenate([np.abs(a - b), a * b])


def fuse(
    g_r2c: Sequence[float],
    g_i2c: Sequence[float],
    perspective,
    config: FusionConfig | None = None,
) -> FusedFeature:
    """Concatenate branch features; zero-length segments mean ablation."""
    a = np.asarray(g_r2c, dtype=np.float64)
    b = np.asarray(g_i2c, dtype=np.float64)
    if config is not None:
        if len(a) != config.r2c_len:
            raise DimensionMismatchError(
                f"g_r2c has length {len(a)}, expected {config.r2c_len}"
            )
        if len(b) != config.i2c_len:
            raise DimensionMismatchError(
                f"g_i2c has length {len(b)}, expected {config.i2c_len}"
            )
    if len(a) == 0 and len(b) == 0:
        raise ValidationError("both branch features are empty")
    concat = np.concatenate([a, b])
    if not np.all(np.isfinite(concat)):
        raise ValidationError("fused feature contains non-finite values")
    return FusedFeature(
        g_r2c=a, g_i2c=b, concat=concat, perspective=perspective_tag(perspective)
    )
