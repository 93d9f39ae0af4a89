"""Embedding extractor and HTTP service for the caption-evaluation core.

Runs a text-only LLM non-autoregressively to pool last-layer hidden
states over evaluation prompts, and a contrastive image/long-text
encoder for alignment vectors. Outputs go to the binary embedding
container or over the HTTP wire protocol; both are consumed by the
evaluation core without any shared code.
"""

from .config import ExtractorConfig, ExtractorError, tiny_config
from .i2c import extract_i2c
from .r2c import extract_r2c
from .service import create_app, serve

__version__ = "0.1.0"

__all__ = [
    "ExtractorConfig",
    "ExtractorError",
    "tiny_config",
    "extract_i2c",
    "extract_r2c",
    "create_app",
    "serve",
]
