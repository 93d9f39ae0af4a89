"""Trainable multi-perspective evaluation of long image captions.

Two feature branches (pooled LLM hidden states over a reference-vs-
candidate prompt, and image-caption alignment vectors) feed a small
sigmoid-output head trained against human judgments. The package also
ships the benchmark harness: ingestion, prompt dumps, training,
scoring, rank-correlation reports, baselines, failure analysis, and
latency measurement.
"""

from .dataset import (
    Dataset,
    JudgmentTriple,
    RawJudgment,
    Sample,
    Split,
    aggregate_judgments,
    load_dataset,
    normalize_judgment,
    save_dataset,
)
from .fusion import FusedFeature, FusionConfig, fuse, i2c_features, pool_r2c
from .head import (
    HeadParams,
    TrainConfig,
    forward,
    gradients,
    load_checkpoint,
    mse_loss,
    save_checkpoint,
    train,
)
from .perspective import SHARED, Perspective
from .prompts import RenderedPrompt, prompt_digest, render_prompt
from .stats import (
    CorrelationReport,
    kendall_tau_b,
    kendall_tau_c,
    pair_counts,
    significance_test,
)
from .store import R2CRecord, VecKind, VecRecord, read_embeddings, write_embeddings

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "JudgmentTriple",
    "RawJudgment",
    "Sample",
    "Split",
    "aggregate_judgments",
    "load_dataset",
    "normalize_judgment",
    "save_dataset",
    "FusedFeature",
    "FusionConfig",
    "fuse",
    "i2c_features",
    "pool_r2c",
    "HeadParams",
    "TrainConfig",
    "forward",
    "gradients",
    "load_checkpoint",
    "mse_loss",
    "save_checkpoint",
    "train",
    "SHARED",
    "Perspective",
    "RenderedPrompt",
    "prompt_digest",
    "render_prompt",
    "CorrelationReport",
    "kendall_tau_b",
    "kendall_tau_c",
    "pair_counts",
    "significance_test",
    "R2CRecord",
    "VecKind",
    "VecRecord",
    "read_embeddings",
    "write_embeddings",
]
