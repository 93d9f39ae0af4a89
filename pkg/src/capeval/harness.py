"""Command implementations behind the CLI.

Each command reads a RunConfig, performs one pipeline stage, and writes
its outputs under `config.output_dir`: delimited data (JSONL/TSV), a JSON
report carrying a config echo sufficient to re-run it, and (unless
disabled) a rendered figure next to the delimited output.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .dataset import Dataset, Sample, Split, load_dataset, save_dataset
from .errors import (
    MissingRecordError,
    PartialDataError,
    ValidationError,
)
from .fusion import FusionConfig, fuse, i2c_features, pooled_from_record
from .head import (
    HeadParams,
    TrainingExample,
    forward,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .perspective import SHARED, Perspective
from .prompts import RenderedPrompt, prompt_digest, render_prompt, write_prompt_dump
from .remote import ClientConfig, EmbeddingClient
from .stats import (
    CorrelationReport,
    SignificanceResult,
    TauEntry,
    kendall_tau_b,
    kendall_tau_c,
    significance_test,
)
from .store import VecKind, load_stores

logger = logging.getLogger(__name__)

_SPLIT_BY_TAG = {s.value: s for s in Split}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")


def _prompt_tags(mode: str) -> tuple[str, ...]:
    return ("desc", "rel", "flu") if mode == "per_perspective" else (SHARED,)


def _render_for(sample: Sample, tag: str, reference_free: bool) -> RenderedPrompt:
    return render_prompt(
        tag,
        sample.references,
        sample.candidate,
        reference_free=reference_free,
        sample_id=sample.id,
    )


class FeatureSource:
    """Uniform access to fused features from files or the service."""

    def __init__(self, config: RunConfig):
        config.require_embedding_source()
        self.config = config
        self.fusion = FusionConfig(
            d_llm=config.d_llm,
            d_clip=config.d_clip,
            use_r2c=config.use_r2c,
            use_i2c=config.use_i2c,
        )
        self.store = None
        self.client = None
        self._i2c_cache: dict[str, np.ndarray] = {}
        if config.embeddings:
            self.store = load_stores(config.embeddings)
        else:
            self.client = EmbeddingClient(
                ClientConfig(
                    endpoint=config.endpoint,
                    expect_r2c_dim=config.d_llm,
                    expect_i2c_dim=config.d_clip,
                )
            )

    def _r2c(self, sample: Sample, tag: str) -> np.ndarray:
        if self.store is not None:
            record = self.store.get_r2c(sample.id, tag)
            expected = prompt_digest(
                _render_for(sample, tag, self.config.reference_free)
            )
            if record.prompt_digest != expected:
                logger.warning(
                    "stale embedding for (%s, %s): stored prompt digest "
                    "differs from the current template",
                    sample.id,
                    tag,
                )
        else:
            record = self.client.fetch_r2c(
                _render_for(sample, tag, self.config.reference_free)
            )
        if record.dim != self.config.d_llm:
            raise ValidationError(
                f"record ({sample.id}, {tag}): dim {record.dim} != "
                f"configured d_llm {self.config.d_llm}"
            )
        return pooled_from_record(record)

    def _i2c(self, sample: Sample) -> np.ndarray:
        # The alignment feature is perspective-independent; fetch once.
        cached = self._i2c_cache.get(sample.id)
        if cached is not None:
            return cached
        if self.store is not None:
            img = self.store.get_vec(sample.id, VecKind.IMAGE)
            cand = self.store.get_vec(sample.id, VecKind.CANDIDATE_TEXT)
        else:
            img = self.client.fetch_i2c_image(sample.id, sample.image_ref)
            cand = self.client.fetch_i2c_text(sample.id, sample.candidate)
        for rec, what in ((img, "image"), (cand, "candidate")):
            if rec.dim != self.config.d_clip:
                raise ValidationError(
                    f"{what} vector for {sample.id}: dim {rec.dim} != "
                    f"configured d_clip {self.config.d_clip}"
                )
        feats = i2c_features(
            np.asarray(img.vec, dtype=np.float64),
            np.asarray(cand.vec, dtype=np.float64),
        )
        self._i2c_cache[sample.id] = feats
        return feats

    def fused(self, sample: Sample, tag: str) -> np.ndarray:
        g_r2c = self._r2c(sample, tag) if self.config.use_r2c else np.zeros(0)
        g_i2c = self._i2c(sample) if self.config.use_i2c else np.zeros(0)
        return fuse(g_r2c, g_i2c, tag, self.fusion).concat


# ---------------------------------------------------------------------------
# ingest / dump-prompts


def run_ingest(config: RunConfig) -> dict:
    if config.dataset is None:
        raise ValidationError("ingest requires a dataset path")
    dataset = load_dataset(config.dataset, min_annotators=config.min_annotators)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "dataset_normalized.jsonl"
    save_dataset(dataset, out_path, normalized=True)
    summary = {
        "samples": len(dataset),
        "split_counts": dataset.split_counts,
        "output": str(out_path),
        "config_echo": config.echo(),
    }
    _write_json(out_dir / "ingest_summary.json", summary)
    return summary


def run_dump_prompts(config: RunConfig) -> dict:
    if config.dataset is None:
        raise ValidationError("dump-prompts requires a dataset path")
    dataset = load_dataset(config.dataset, min_annotators=config.min_annotators)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "prompts.jsonl"
    prompts = [
        _render_for(sample, tag, config.reference_free)
        for sample in dataset
        for tag in _prompt_tags(config.mode)
    ]
    count = write_prompt_dump(prompts, out_path)
    return {"prompts": count, "output": str(out_path), "config_echo": config.echo()}


# ---------------------------------------------------------------------------
# training


def _triple_or_fail(sample: Sample, what: str) -> "np.ndarray":
    if sample.judgments is None:
        raise ValidationError(f"{what} sample {sample.id} has no judgments")
    j = sample.judgments
    return np.array([j.desc, j.rel, j.flu], dtype=np.float64)


def _training_example(
    sample: Sample, source: FeatureSource, mode: str
) -> TrainingExample:
    targets3 = _triple_or_fail(sample, "train/val")
    if mode == "per_perspective":
        inputs = np.stack(
            [source.fused(sample, p.value) for p in Perspective]
        )
        rows = np.arange(3)
        targets = targets3
    elif mode == "shared_prompt":
        x = source.fused(sample, SHARED)
        inputs = np.stack([x, x, x])
        rows = np.arange(3)
        targets = targets3
    else:  # single_score: overall target is the mean of the triple
        inputs = source.fused(sample, SHARED)[None, :]
        rows = np.zeros(1, dtype=np.intp)
        targets = np.array([float(np.mean(targets3))])
    return TrainingExample(
        sample_id=sample.id, inputs=inputs, rows=rows, targets=targets
    )


def run_train(config: RunConfig) -> dict:
    if config.dataset is None:
        raise ValidationError("train requires a dataset path")
    dataset = load_dataset(config.dataset, min_annotators=config.min_annotators)
    source = FeatureSource(config)

    examples = {}
    for split in (Split.TRAIN, Split.VAL):
        samples = dataset.for_split(split)
        if not samples:
            raise ValidationError(f"empty {split.value} split")
        examples[split] = [
            _training_example(s, source, config.mode) for s in samples
        ]

    params, history = train(
        examples[Split.TRAIN],
        examples[Split.VAL],
        config.train,
        mode=config.mode,
        d_in=config.d_in,
    )

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = Path(config.checkpoint) if config.checkpoint else out_dir / "head.ckpt"
    metadata = {
        "best_epoch": history.best_epoch,
        "seed": config.train.seed,
        "config_echo": config.echo(),
    }
    save_checkpoint(params, ckpt_path, metadata)
    payload = history.as_dict()
    payload["config_echo"] = config.echo()
    payload["checkpoint"] = str(ckpt_path)
    _write_json(out_dir / "train_history.json", payload)
    if config.figures:
        from . import plots

        plots.plot_training(payload, out_dir / "training_curves.png")
    return payload


# ---------------------------------------------------------------------------
# scoring


def _select_samples(dataset: Dataset, split: Optional[str]) -> tuple[Sample, ...]:
    if split is None:
        return dataset.samples
    if split not in _SPLIT_BY_TAG:
        raise ValidationError(f"unknown split tag {split!r}")
    samples = dataset.for_split(_SPLIT_BY_TAG[split])
    if not samples:
        raise ValidationError(f"split {split} has no samples")
    return samples


def _score_sample(
    sample: Sample, source: FeatureSource, params: HeadParams, mode: str
) -> dict:
    row: dict = {"id": sample.id}
    if mode == "per_perspective":
        for r, p in enumerate(Perspective):
            x = source.fused(sample, p.value)
            row[p.value] = float(forward(params, x)[r])
    elif mode == "shared_prompt":
        y = forward(params, source.fused(sample, SHARED))
        for r, p in enumerate(Perspective):
            row[p.value] = float(y[r])
    else:
        row["score"] = float(forward(params, source.fused(sample, SHARED))[0])
    return row


def run_score(config: RunConfig, baseline: Optional[str] = None) -> dict:
    """Score the configured samples; returns a summary dict.

    With `baseline` set to "bleu" or "avg_cosine" the learned head is
    bypassed and the baseline emits a single score per sample in the same
    JSONL schema.
    """
    if config.dataset is None:
        raise ValidationError("score requires a dataset path")
    dataset = load_dataset(config.dataset, min_annotators=config.min_annotators)
    samples = _select_samples(dataset, config.split)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = f"scores_{baseline}" if baseline else "scores"
    out_path = out_dir / f"{name}.jsonl"

    rows: list[dict] = []
    failures: list[str] = []
    if baseline is None:
        if config.checkpoint is None:
            raise ValidationError("score requires a checkpoint")
        params, _meta = load_checkpoint(config.checkpoint, expect_d_in=config.d_in)
        if params.mode != config.mode:
            raise ValidationError(
                f"checkpoint mode {params.mode!r} != configured {config.mode!r}"
            )
        source = FeatureSource(config)
        for sample in samples:
            try:
                rows.append(_score_sample(sample, source, params, config.mode))
            except MissingRecordError as e:
                failures.append(f"sample {sample.id}: {e.args[0]}")
    elif baseline == "bleu":
        from .baselines import bleu, tokenize

        for sample in samples:
            cand = tokenize(sample.candidate)
            refs = [tokenize(r) for r in sample.references]
            refs = [r for r in refs if r]
            if not cand or not refs:
                failures.append(f"sample {sample.id}: empty tokenization")
                continue
            rows.append({"id": sample.id, "score": bleu(cand, refs)})
    elif baseline == "avg_cosine":
        from .baselines import avg_segment_cosine, sentence_split

        if not config.endpoint:
            raise ValidationError(
                "avg_cosine baseline needs a service endpoint for "
                "per-sentence embeddings"
            )
        source = FeatureSource(config)
        for sample in samples:
            try:
                img = source.client.fetch_i2c_image(sample.id, sample.image_ref)
                sent_vecs = [
                    source.client.fetch_i2c_text(sample.id, s).vec
                    for s in sentence_split(sample.candidate)
                ]
                rows.append(
                    {
                        "id": sample.id,
                        "score": avg_segment_cosine(
                            np.asarray(img.vec, dtype=np.float64),
                            [np.asarray(v, dtype=np.float64) for v in sent_vecs],
                        ),
                    }
                )
            except MissingRecordError as e:
                failures.append(f"sample {sample.id}: {e.args[0]}")
    else:
        raise ValidationError(f"unknown baseline {baseline!r}")

    with out_path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")

    summary = {
        "scored": len(rows),
        "failed": len(failures),
        "failures": failures,
        "output": str(out_path),
        "config_echo": config.echo(),
    }
    _write_json(out_dir / f"{name}_summary.json", summary)
    if failures:
        raise PartialDataError(
            f"{len(failures)} of {len(samples)} samples could not be scored",
            failures,
        )
    return summary


# ---------------------------------------------------------------------------
# evaluation


def read_scores(path: str | Path) -> dict[str, dict]:
    rows: dict[str, dict] = {}
    with Path(path).open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{line_no}: malformed JSON: {e.msg}")
            if "id" not in obj:
                raise ValidationError(f"{path}:{line_no}: missing 'id'")
            if obj["id"] in rows:
                raise ValidationError(f"{path}:{line_no}: duplicate id {obj['id']!r}")
            rows[obj["id"]] = obj
    if not rows:
        raise ValidationError(f"{path}: no score rows")
    return rows


def _metric_value(row: dict, perspective: str, path: str) -> float:
    if perspective in row:
        return float(row[perspective])
    if "score" in row:
        return float(row["score"])
    raise ValidationError(
        f"{path}: row for {row.get('id')!r} has neither {perspective!r} nor 'score'"
    )


def _aligned_vectors(
    samples: Sequence[Sample], scores: dict[str, dict], path: str
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per perspective: (metric scores, human judgments), sample-aligned."""
    missing = [s.id for s in samples if s.id not in scores]
    if missing:
        raise ValidationError(
            f"{path}: missing scores for {len(missing)} samples "
            f"(first: {missing[:3]})"
        )
    human_triples = np.stack([_triple_or_fail(s, "evaluation") for s in samples])
    out = {}
    for r, p in enumerate(Perspective):
        metric = np.array(
            [_metric_value(scores[s.id], p.value, path) for s in samples]
        )
        out[p.value] = (metric, human_triples[:, r])
    return out


def run_evaluate(
    config: RunConfig,
    scores_path: str | Path,
    compare_path: Optional[str | Path] = None,
) -> CorrelationReport:
    if config.dataset is None:
        raise ValidationError("evaluate requires a dataset path")
    dataset = load_dataset(config.dataset, min_annotators=config.min_annotators)
    split = config.split or "testA"
    samples = _select_samples(dataset, split)
    scores = read_scores(scores_path)
    vectors = _aligned_vectors(samples, scores, str(scores_path))

    perspectives = {}
    for name, (metric, human) in vectors.items():
        perspectives[name] = TauEntry(
            tau_b=kendall_tau_b(metric, human),
            tau_c=kendall_tau_c(metric, human),
            n=len(metric),
        )

    significance: list[SignificanceResult] = []
    if compare_path is not None:
        other = read_scores(compare_path)
        other_vectors = _aligned_vectors(samples, other, str(compare_path))
        pair = f"{Path(scores_path).stem}_vs_{Path(compare_path).stem}"
        for name in vectors:
            a, human = vectors[name]
            b, _ = other_vectors[name]
            significance.append(
                significance_test(
                    a,
                    b,
                    human,
                    perspective=name,
                    resamples=config.significance_resamples,
                    seed=config.significance_seed,
                    metric_pair=pair,
                )
            )

    report = CorrelationReport(
        split=split, perspectives=perspectives, significance=significance
    )
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report.as_dict()
    payload["config_echo"] = config.echo()
    _write_json(out_dir / "correlation.json", payload)
    (out_dir / "correlation.tsv").write_text(report.to_tsv(), "utf-8")
    if config.figures:
        from . import plots

        plots.plot_correlation(payload, out_dir / "correlation.png")
    return report


# ---------------------------------------------------------------------------
# failure analysis


@dataclass(frozen=True)
class FailureEntry:
    sample_id: str
    human: float
    predicted: float
    abs_error: float
    category: Optional[str] = None

    def as_dict(self) -> dict:
        out = {
            "sample_id": self.sample_id,
            "human": self.human,
            "predicted": self.predicted,
            "abs_error": self.abs_error,
        }
        if self.category is not None:
            out["category"] = self.category
        return out


@dataclass
class FailureReport:
    theta: float
    entries: dict[str, list[FailureEntry]] = field(default_factory=dict)

    @property
    def counts(self) -> dict[str, int]:
        return {name: len(rows) for name, rows in self.entries.items()}

    def as_dict(self) -> dict:
        return {
            "theta": self.theta,
            "counts": self.counts,
            "entries": {
                name: [e.as_dict() for e in rows]
                for name, rows in self.entries.items()
            },
        }


def _load_categories(path: Optional[str | Path]) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text("utf-8"))
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: category side-file must be a JSON object")
    return data


def _category_for(categories: dict, sample_id: str, perspective: str) -> Optional[str]:
    entry = categories.get(sample_id)
    if entry is None:
        return None
    if isinstance(entry, str):
        return entry
    if isinstance(entry, dict):
        value = entry.get(perspective)
        return value if isinstance(value, str) else None
    return None


def run_failures(
    config: RunConfig,
    scores_path: str | Path,
    categories_path: Optional[str | Path] = None,
) -> FailureReport:
    """List every (sample, perspective) with |y - y_hat| >= theta."""
    if config.dataset is None:
        raise ValidationError("failures requires a dataset path")
    dataset = load_dataset(config.dataset, min_annotators=config.min_annotators)
    samples = _select_samples(dataset, config.split)
    scores = read_scores(scores_path)
    vectors = _aligned_vectors(samples, scores, str(scores_path))
    categories = _load_categories(categories_path)

    report = FailureReport(theta=config.theta)
    abs_errors: dict[str, list[float]] = {}
    for name, (metric, human) in vectors.items():
        errors = np.abs(human - metric)
        abs_errors[name] = errors.tolist()
        rows = []
        for sample, h, m, err in zip(samples, human, metric, errors):
            if err >= config.theta:
                rows.append(
                    FailureEntry(
                        sample_id=sample.id,
                        human=float(h),
                        predicted=float(m),
                        abs_error=float(err),
                        category=_category_for(categories, sample.id, name),
                    )
                )
        report.entries[name] = rows

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report.as_dict()
    payload["config_echo"] = config.echo()
    _write_json(out_dir / "failures.json", payload)
    if config.figures:
        from . import plots

        plots.plot_failures(abs_errors, config.theta, out_dir / "failures.png")
    return report


# ---------------------------------------------------------------------------
# latency benchmarking


def _span_stats(measurements_ns: Sequence[int]) -> dict:
    arr = np.asarray(measurements_ns, dtype=np.float64) / 1e6
    return {
        "mean_ms": float(np.mean(arr)),
        "p50_ms": float(np.percentile(arr, 50)),
        "p95_ms": float(np.percentile(arr, 95)),
        "measurements": len(arr),
    }


def run_bench(config: RunConfig, repetitions: Optional[int] = None) -> dict:
    """Measure two spans per sample.

    span "core" covers feature assembly plus the head forward pass; span
    "end_to_end" adds embedding retrieval from the configured source.
    Neither span includes encoder forward-pass cost when embeddings were
    precomputed, so these numbers are not comparable to encoder-inclusive
    timings.
    """
    reps = config.latency_repetitions if repetitions is None else repetitions
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    span_defs = {
        "core": "feature assembly + head forward",
        "end_to_end": "embedding retrieval + feature assembly + head forward",
    }
    note = (
        "core excludes embedding retrieval and all encoder inference; "
        "end_to_end adds retrieval from the configured source only. "
        "Do not compare either span against encoder-inclusive timings."
    )

    if reps == 0:
        payload = {
            "repetitions": 0,
            "n_samples": 0,
            "spans": {},
            "span_definitions": span_defs,
            "note": note,
            "config_echo": config.echo(),
        }
        _write_json(out_dir / "bench.json", payload)
        return payload

    if config.dataset is None:
        raise ValidationError("bench requires a dataset path")
    if config.checkpoint is None:
        raise ValidationError("bench requires a checkpoint")
    dataset = load_dataset(config.dataset, min_annotators=config.min_annotators)
    samples = _select_samples(dataset, config.split)
    params, _meta = load_checkpoint(config.checkpoint, expect_d_in=config.d_in)
    source = FeatureSource(config)
    tags = _prompt_tags(config.mode)

    core_ns: list[int] = []
    end_ns: list[int] = []
    for _ in range(reps):
        for sample in samples:
            t0 = time.perf_counter_ns()
            if config.use_r2c:
                r2c_records = {
                    tag: (
                        source.store.get_r2c(sample.id, tag)
                        if source.store is not None
                        else source.client.fetch_r2c(
                            _render_for(sample, tag, config.reference_free)
                        )
                    )
                    for tag in tags
                }
            else:
                r2c_records = {}
            if config.use_i2c:
                if source.store is not None:
                    img = source.store.get_vec(sample.id, VecKind.IMAGE)
                    cand = source.store.get_vec(sample.id, VecKind.CANDIDATE_TEXT)
                else:
                    img = source.client.fetch_i2c_image(sample.id, sample.image_ref)
                    cand = source.client.fetch_i2c_text(sample.id, sample.candidate)
            t1 = time.perf_counter_ns()
            g_i2c = (
                i2c_features(
                    np.asarray(img.vec, dtype=np.float64),
                    np.asarray(cand.vec, dtype=np.float64),
                )
                if config.use_i2c
                else np.zeros(0)
            )
            for tag in tags:
                g_r2c = (
                    pooled_from_record(r2c_records[tag])
                    if config.use_r2c
                    else np.zeros(0)
                )
                forward(params, fuse(g_r2c, g_i2c, tag, source.fusion).concat)
            t2 = time.perf_counter_ns()
            core_ns.append(t2 - t1)
            end_ns.append(t2 - t0)

    payload = {
        "repetitions": reps,
        "n_samples": len(samples),
        "spans": {"core": _span_stats(core_ns), "end_to_end": _span_stats(end_ns)},
        "span_definitions": span_defs,
        "note": note,
        "config_echo": config.echo(),
    }
    _write_json(out_dir / "bench.json", payload)
    tsv = ["span\tmean_ms\tp50_ms\tp95_ms\tmeasurements"]
    for name, stats in payload["spans"].items():
        tsv.append(
            f"{name}\t{stats['mean_ms']:.4f}\t{stats['p50_ms']:.4f}"
            f"\t{stats['p95_ms']:.4f}\t{stats['measurements']}"
        )
    (out_dir / "bench.tsv").write_text("\n".join(tsv) + "\n", "utf-8")
    if config.figures:
        from . import plots

        plots.plot_latency(payload["spans"], out_dir / "bench.png")
    return payload
