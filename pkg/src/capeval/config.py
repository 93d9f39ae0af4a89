"""Run configuration: TOML/JSON files with CLI flag overrides.

The `EMBED_ENDPOINT` environment variable overrides the service URL from
the file; explicit CLI flags override both.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ValidationError
from .head import MODES, TrainConfig

ENDPOINT_ENV_VAR = "EMBED_ENDPOINT"


@dataclass
class RunConfig:
    dataset: Optional[Path] = None
    output_dir: Path = Path("runs/default")
    mode: str = "per_perspective"
    reference_free: bool = False
    embeddings: list[Path] = field(default_factory=list)
    endpoint: Optional[str] = None
    checkpoint: Optional[Path] = None
    use_r2c: bool = True
    use_i2c: bool = True
    d_llm: int = 2048
    d_clip: int = 768
    split: Optional[str] = None
    theta: float = 0.25
    latency_repetitions: int = 100
    min_annotators: int = 3
    significance_resamples: int = 10_000
    significance_seed: int = 0
    figures: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.theta < 0:
            raise ValidationError("theta must be >= 0")
        if self.latency_repetitions < 0:
            raise ValidationError("latency_repetitions must be >= 0")

    @property
    def d_in(self) -> int:
        total = 0
        if self.use_r2c:
            total += 2 * self.d_llm
        if self.use_i2c:
            total += 2 * self.d_clip
        return total

    def embedding_source(self) -> str:
        """Identity string echoed into reports."""
        if self.endpoint:
            return f"service:{self.endpoint}"
        return "files:" + ",".join(str(p) for p in self.embeddings)

    def require_embedding_source(self) -> None:
        has_files = bool(self.embeddings)
        has_endpoint = bool(self.endpoint)
        if has_files == has_endpoint:
            raise ValidationError(
                "configure exactly one embedding source: "
                "'embeddings' file list or 'endpoint' URL"
            )

    def echo(self) -> dict:
        """Everything needed to re-run the command."""
        return {
            "dataset": str(self.dataset) if self.dataset else None,
            "mode": self.mode,
            "reference_free": self.reference_free,
            "embedding_source": self.embedding_source(),
            "checkpoint": str(self.checkpoint) if self.checkpoint else None,
            "use_r2c": self.use_r2c,
            "use_i2c": self.use_i2c,
            "d_llm": self.d_llm,
            "d_clip": self.d_clip,
            "split": self.split,
            "theta": self.theta,
            "min_annotators": self.min_annotators,
            "significance_resamples": self.significance_resamples,
            "significance_seed": self.significance_seed,
            "train": self.train.as_dict(),
        }


_PATH_FIELDS = {"dataset", "output_dir", "checkpoint"}
_SCALAR_FIELDS = {
    f.name
    for f in dataclasses.fields(RunConfig)
    if f.name not in {"embeddings", "train"} | _PATH_FIELDS
}


def _apply_mapping(config: RunConfig, data: dict, source: str) -> RunConfig:
    for key, value in data.items():
        if key == "train":
            if not isinstance(value, dict):
                raise ValidationError(f"{source}: 'train' must be a table/object")
            try:
                config.train = dataclasses.replace(config.train, **value)
            except TypeError as e:
                raise ValidationError(f"{source}: bad train key: {e}") from None
        elif key == "embeddings":
            if not isinstance(value, list):
                raise ValidationError(f"{source}: 'embeddings' must be a list")
            config.embeddings = [Path(v) for v in value]
        elif key in _PATH_FIELDS:
            config.__dict__[key] = Path(value) if value is not None else None
        elif key in _SCALAR_FIELDS:
            config.__dict__[key] = value
        else:
            raise ValidationError(f"{source}: unknown config key {key!r}")
    config.__post_init__()
    return config


def load_run_config(
    path: Optional[str | Path] = None, overrides: Optional[dict] = None
) -> RunConfig:
    """Build a RunConfig from an optional file plus override mapping."""
    config = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        raw = path.read_bytes()
        if path.suffix == ".json":
            data = json.loads(raw.decode("utf-8"))
        else:
            try:
                data = tomllib.loads(raw.decode("utf-8"))
            except tomllib.TOMLDecodeError as e:
                raise ValidationError(f"{path}: invalid TOML: {e}") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: top level must be a table/object")
        config = _apply_mapping(config, data, str(path))

    env_endpoint = os.environ.get(ENDPOINT_ENV_VAR)
    if env_endpoint:
        config.endpoint = env_endpoint

    if overrides:
        config = _apply_mapping(
            config, {k: v for k, v in overrides.items() if v is not None}, "flags"
        )
    return config
