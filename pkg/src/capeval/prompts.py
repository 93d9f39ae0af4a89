"""Deterministic rendering of the per-perspective evaluation prompts.

Each rendered prompt is role-segmented plain text (system / user /
assistant prefix). Model-specific chat templates are applied downstream by
the embedding extractor, keeping this module backbone-agnostic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ValidationError
from .perspective import SHARED, Perspective, perspective_tag

ASSISTANT_PREFIX = "Score:"
SCALE_INSTRUCTION = "Only give a number from 1 to 5 with no text."

_DESC_SYSTEM = """\
Evaluate the descriptiveness of the candidate caption based on the reference captions and the provided image. Focus only on how detailed the caption is, regardless of relevance. Refer to the following criteria:
- 5: Extremely detailed - Captures all objects, relationships, and attributes in the image with precise and complete descriptions, including spatial relationships and overall context.
- 4: Detailed - Captures most objects and relationships but lacks some elements.
- 3: Partially detailed - Mentions key objects but misses spatial relationships or additional details.
- 2: Insufficient detail - Mentions only a few objects correctly, with many elements missing.
- 1: Very poor detail - Mentions almost no objects and fails to represent the image content.
Only give a number from 1 to 5 with no text."""

_REL_SYSTEM = """\
Evaluate the relevance of the candidate caption to the provided image considering the reference captions. Focus solely on how well the caption aligns with the image content, ignoring fluency or descriptiveness. Refer to the following criteria:
- 5: Fully relevant - Accurately describes the image content with no errors.
- 4: Mostly relevant - Contains minor errors but is generally aligned with the image content.
- 3: Partially relevant - Includes significant errors but some parts relate to the image.
- 2: Barely relevant - Contains many errors and deviates significantly from the image content.
- 1: Not relevant - Contains numerous errors and fundamentally mismatches the image.
Only give a number from 1 to 5 with no text."""

_FLU_SYSTEM = """\
Evaluate the fluency of the candidate caption, focusing solely on its grammatical correctness, naturalness, and readability. Ignore the content's relevance or descriptiveness. Refer to the following criteria:
- 5: Very fluent - No errors or only one minor error; reads naturally as proper English sentences.
- 4: Fluent - Contains some errors but is overall natural and easy to understand.
- 3: Partially fluent - Noticeable errors but still comprehensible.
- 2: Lacking fluency - Many errors that make it hard to read.
- 1: Not fluent - Excessive errors that make it incomprehensible.
Only give a number from 1 to 5 with no text."""

# Combined rubric for the shared-prompt and single-score head modes, where
# one prompt must cover all qualities at once.
_SHARED_SYSTEM = """\
Evaluate the overall quality of the candidate caption based on the reference captions, considering how detailed it is, how accurately it reflects the image content, and how fluent it is. Refer to the following criteria:
- 5: Excellent - Detailed, accurate, and fluent with at most minor flaws.
- 4: Good - Strong overall with a few noticeable shortcomings.
- 3: Fair - Adequate but with clear gaps in detail, accuracy, or fluency.
- 2: Poor - Substantial problems in detail, accuracy, or fluency.
- 1: Very poor - Fails on most aspects of detail, accuracy, and fluency.
Only give a number from 1 to 5 with no text."""

SYSTEM_RUBRICS = {
    "desc": _DESC_SYSTEM,
    "rel": _REL_SYSTEM,
    "flu": _FLU_SYSTEM,
    SHARED: _SHARED_SYSTEM,
}


@dataclass(frozen=True)
class RenderedPrompt:
    """Role-segmented prompt text for one sample and one perspective."""

    system: str
    user: str
    assistant_prefix: str
    perspective: str
    reference_free: bool
    sample_id: str


def render_prompt(
    perspective: "Perspective | str",
    references: Sequence[str],
    candidate: str,
    reference_free: bool = False,
    sample_id: str = "",
) -> RenderedPrompt:
    """Render the evaluation prompt for one candidate caption.

    References are numbered in their stored order. With `reference_free`
    the user text carries no reference block at all; the rubric is
    unchanged.
    """
    tag = perspective_tag(perspective)
    if not candidate:
        raise ValidationError("candidate caption must be non-empty")
    if not reference_free and not references:
        raise ValidationError("references must be non-empty unless reference_free")

    if reference_free:
        user = f"Candidate Caption: {candidate}"
    else:
        numbered = "\n".join(f"{i}. {ref}" for i, ref in enumerate(references, 1))
        user = f"Reference Captions: {numbered}\nCandidate Caption: {candidate}"

    return RenderedPrompt(
        system=SYSTEM_RUBRICS[tag],
        user=user,
        assistant_prefix=ASSISTANT_PREFIX,
        perspective=tag,
        reference_free=reference_free,
        sample_id=sample_id,
    )


def prompt_digest(p: RenderedPrompt) -> int:
    """64-bit content hash, stable across runs and platforms.

    Fields are length-prefixed before hashing so no two distinct prompts
    can collide by concatenation.
    """
    h = hashlib.blake2b(digest_size=8)
    fields = (
        p.sample_id,
        p.perspective,
        "1" if p.reference_free else "0",
        p.system,
        p.user,
        p.assistant_prefix,
    )
    for text in fields:
        data = text.encode("utf-8")
        h.update(len(data).to_bytes(4, "little"))
        h.update(data)
    return int.from_bytes(h.digest(), "little")


def write_prompt_dump(prompts: Iterable[RenderedPrompt], path: str | Path) -> int:
    """Write prompts as JSONL for the extractor's batch mode; returns count."""
    n = 0
    with Path(path).open("w", encoding="utf-8") as f:
        for p in prompts:
            f.write(
                json.dumps(
                    {
                        "sample_id": p.sample_id,
                        "perspective": p.perspective,
                        "system": p.system,
                        "user": p.user,
                        "assistant_prefix": p.assistant_prefix,
                        "digest": prompt_digest(p),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
            n += 1
    return n
