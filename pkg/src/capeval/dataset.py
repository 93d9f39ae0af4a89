"""Data model, JSONL ingestion, and judgment normalization.

A benchmark file is UTF-8 JSONL, one sample per line:

    {"id": str, "image": str, "references": [str, ...], "candidate": str,
     "generator": str, "split": "train"|"val"|"testA"|"testB",
     "judgments": {"desc": f, "rel": f, "flu": f}            # in [0, 1]
     | "raw_judgments": [{"annotator": str,
                          "perspective": "desc"|"rel"|"flu",
                          "score": 1..5}, ...]}

Unknown keys are ignored with a warning. Raw five-point judgments are
normalized to [0, 1] and averaged per perspective at load time.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .errors import (
    DuplicateKeyError,
    InsufficientAnnotationsError,
    ValidationError,
)
from .perspective import Perspective

logger = logging.getLogger(__name__)

KNOWN_KEYS = {
    "id",
    "image",
    "references",
    "candidate",
    "generator",
    "split",
    "judgments",
    "raw_judgments",
}

RAW_SCORE_MIN = 1
RAW_SCORE_MAX = 5
DEFAULT_MIN_ANNOTATORS = 3


class Split(enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST_A = "testA"
    TEST_B = "testB"

    def __str__(self) -> str:
        return self.value


JUDGED_SPLITS = (Split.TEST_A, Split.TEST_B)


def normalize_judgment(raw: int) -> float:
    """Map a five-point score to [0, 1] linearly: k -> (k - 1) / 4."""
    if not isinstance(raw, int) or isinstance(raw, bool):
        raise ValidationError(f"raw judgment must be an integer, got {raw!r}")
    if not RAW_SCORE_MIN <= raw <= RAW_SCORE_MAX:
        raise ValidationError(
            f"raw judgment {raw} outside valid range "
            f"{RAW_SCORE_MIN}..{RAW_SCORE_MAX}"
        )
    return (raw - 1) / 4


def aggregate_judgments(
    scores: Sequence[float], min_count: int = DEFAULT_MIN_ANNOTATORS
) -> float:
    """Unweighted mean of unit scores; requires at least `min_count` of them.

    Uses exactly rounded summation so the result is invariant under
    permutation of the input.
    """
    if len(scores) < min_count:
        raise InsufficientAnnotationsError(
            f"need at least {min_count} judgments, got {len(scores)}"
        )
    for s in scores:
        if not (0.0 <= s <= 1.0):
            raise ValidationError(f"unit score {s!r} outside [0, 1]")
    return math.fsum(scores) / len(scores)


@dataclass(frozen=True)
class RawJudgment:
    """One annotator's five-point score for one perspective."""

    annotator_id: str
    perspective: Perspective
    score: int

    def __post_init__(self) -> None:
        if not self.annotator_id:
            raise ValidationError("annotator_id must be non-empty")
        if not isinstance(self.perspective, Perspective):
            raise ValidationError(
                f"perspective must be a Perspective, got {self.perspective!r}"
            )
        normalize_judgment(self.score)  # range check


@dataclass(frozen=True)
class JudgmentTriple:
    """Aggregated unit scores for the three perspectives."""

    desc: float
    rel: float
    flu: float

    def __post_init__(self) -> None:
        for name in ("desc", "rel", "flu"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not (0.0 <= v <= 1.0):
                raise ValidationError(f"judgment {name}={v!r} outside [0, 1]")

    def get(self, perspective: Perspective) -> float:
        return getattr(self, perspective.value)

    def as_dict(self) -> dict[str, float]:
        return {"desc": self.desc, "rel": self.rel, "flu": self.flu}


@dataclass(frozen=True)
class Sample:
    """One image with references, a candidate caption, and its judgments."""

    id: str
    image_ref: str
    references: tuple[str, ...]
    candidate: str
    generator: str
    split: Split
    judgments: Optional[JudgmentTriple] = None
    per_annotator: Optional[tuple[RawJudgment, ...]] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("sample id must be non-empty")
        if not self.candidate:
            raise ValidationError(f"sample {self.id}: candidate must be non-empty")
        if not self.references:
            raise ValidationError(f"sample {self.id}: references must be non-empty")


@dataclass(frozen=True)
class Dataset:
    """Immutable, validated collection of samples."""

    samples: tuple[Sample, ...]
    split_counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        counts: dict[str, int] = {}
        for s in self.samples:
            if s.id in seen:
                raise DuplicateKeyError(f"duplicate sample id: {s.id}")
            seen.add(s.id)
            counts[s.split.value] = counts.get(s.split.value, 0) + 1
        object.__setattr__(self, "split_counts", counts)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def by_id(self, sample_id: str) -> Sample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)

    def for_split(self, split: Split) -> tuple[Sample, ...]:
        return tuple(s for s in self.samples if s.split is split)


def _aggregate_raw(
    raws: Sequence[RawJudgment], sample_id: str, min_annotators: int
) -> JudgmentTriple:
    per: dict[Perspective, list[float]] = {p: [] for p in Perspective}
    seen: set[tuple[str, Perspective]] = set()
    for r in raws:
        key = (r.annotator_id, r.perspective)
        if key in seen:
            raise DuplicateKeyError(
                f"sample {sample_id}: annotator {r.annotator_id!r} judged "
                f"{r.perspective.value} more than once"
            )
        seen.add(key)
        per[r.perspective].append(normalize_judgment(r.score))
    values = {}
    for p in Perspective:
        try:
            values[p.value] = aggregate_judgments(per[p], min_annotators)
        except InsufficientAnnotationsError as e:
            raise InsufficientAnnotationsError(
                f"sample {sample_id}, perspective {p.value}: {e}"
            ) from None
    return JudgmentTriple(**values)


def _parse_line(
    obj: dict, line_no: int, min_annotators: int
) -> Sample:
    unknown = set(obj) - KNOWN_KEYS
    if unknown:
        logger.warning("line %d: ignoring unknown keys %s", line_no, sorted(unknown))

    def need(key: str, types) -> object:
        if key not in obj:
            raise ValidationError(f"line {line_no}: missing key {key!r}")
        v = obj[key]
        if not isinstance(v, types):
            raise ValidationError(f"line {line_no}: key {key!r} has wrong type")
        return v

    split_tag = need("split", str)
    try:
        split = Split(split_tag)
    except ValueError:
        raise ValidationError(
            f"line {line_no}: unknown split tag {split_tag!r}"
        ) from None

    refs = need("references", list)
    if not all(isinstance(r, str) for r in refs):
        raise ValidationError(f"line {line_no}: references must be strings")

    has_judgments = "judgments" in obj
    has_raw = "raw_judgments" in obj
    if has_judgments and has_raw:
        raise ValidationError(
            f"line {line_no}: provide either 'judgments' or 'raw_judgments', not both"
        )

    judgments = None
    per_annotator = None
    if has_raw:
        raw_list = need("raw_judgments", list)
        parsed = []
        for j, entry in enumerate(raw_list):
            if not isinstance(entry, dict):
                raise ValidationError(
                    f"line {line_no}: raw_judgments[{j}] must be an object"
                )
            try:
                persp = Perspective(entry.get("perspective"))
            except ValueError:
                raise ValidationError(
                    f"line {line_no}: raw_judgments[{j}].perspective "
                    f"{entry.get('perspective')!r} is invalid"
                ) from None
            score = entry.get("score")
            if not isinstance(score, int) or isinstance(score, bool) or not (
                RAW_SCORE_MIN <= score <= RAW_SCORE_MAX
            ):
                raise ValidationError(
                    f"line {line_no}: raw_judgments[{j}].score {score!r} "
                    f"outside {RAW_SCORE_MIN}..{RAW_SCORE_MAX}"
                )
            annot = entry.get("annotator")
            if not isinstance(annot, str) or not annot:
                raise ValidationError(
                    f"line {line_no}: raw_judgments[{j}].annotator must be a "
                    "non-empty string"
                )
            parsed.append(RawJudgment(annot, persp, score))
        per_annotator = tuple(parsed)
    elif has_judgments:
        jd = need("judgments", dict)
        for k in ("desc", "rel", "flu"):
            v = jd.get(k)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not (
                0.0 <= v <= 1.0
            ):
                raise ValidationError(
                    f"line {line_no}: judgments.{k} {v!r} outside [0, 1]"
                )
        judgments = JudgmentTriple(jd["desc"], jd["rel"], jd["flu"])

    sample_id = need("id", str)
    if per_annotator is not None:
        judgments = _aggregate_raw(per_annotator, sample_id, min_annotators)

    if split in JUDGED_SPLITS and judgments is None:
        raise ValidationError(
            f"line {line_no}: sample {sample_id!r} in split {split.value} "
            "must carry judgments"
        )

    try:
        return Sample(
            id=sample_id,
            image_ref=need("image", str),
            references=tuple(refs),
            candidate=need("candidate", str),
            generator=need("generator", str),
            split=split,
            judgments=judgments,
            per_annotator=per_annotator,
        )
    except ValidationError as e:
        raise ValidationError(f"line {line_no}: {e}") from None


def load_dataset(
    path: str | Path,
    split_filter: Optional[Iterable[Split]] = None,
    min_annotators: int = DEFAULT_MIN_ANNOTATORS,
) -> Dataset:
    """Load and validate a JSONL benchmark file.

    The whole file is validated (including cross-line id uniqueness) before
    `split_filter`, if given, restricts the returned samples.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"dataset file not found: {path}")
    samples: list[Sample] = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(
                    f"line {line_no}: malformed JSON: {e.msg}"
                ) from None
            if not isinstance(obj, dict):
                raise ValidationError(f"line {line_no}: expected a JSON object")
            samples.append(_parse_line(obj, line_no, min_annotators))

    full = Dataset(tuple(samples))  # validates id uniqueness
    if split_filter is None:
        return full
    wanted = set(split_filter)
    return Dataset(tuple(s for s in full.samples if s.split in wanted))


def save_dataset(
    dataset: Dataset, path: str | Path, normalized: bool = False
) -> None:
    """Write a dataset back to JSONL.

    With `normalized=False` raw judgments are preserved when present, so
    load(save(d)) reproduces the in-memory model. With `normalized=True`
    only the aggregated judgment triples are written.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for s in dataset.samples:
            obj: dict = {
                "id": s.id,
                "image": s.image_ref,
                "references": list(s.references),
                "candidate": s.candidate,
                "generator": s.generator,
                "split": s.split.value,
            }
            if s.per_annotator is not None and not normalized:
                obj["raw_judgments"] = [
                    {
                        "annotator": r.annotator_id,
                        "perspective": r.perspective.value,
                        "score": r.score,
                    }
                    for r in s.per_annotator
                ]
            elif s.judgments is not None:
                obj["judgments"] = s.judgments.as_dict()
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")
