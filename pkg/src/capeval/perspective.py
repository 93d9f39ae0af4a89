"""The three scored perspectives and the shared pseudo-perspective tag."""

from __future__ import annotations

import enum

from .errors import ValidationError


class Perspective(enum.Enum):
    """Closed set of scored caption qualities."""

    DESC = "desc"
    REL = "rel"
    FLU = "flu"

    def __str__(self) -> str:
        return self.value


# Tag used when one prompt/feature serves all outputs (shared-prompt and
# single-score head modes). Wire code 255 in the embedding file format.
SHARED = "shared"

PERSPECTIVE_WIRE_CODES = {"desc": 0, "rel": 1, "flu": 2, SHARED: 255}
WIRE_CODE_PERSPECTIVES = {v: k for k, v in PERSPECTIVE_WIRE_CODES.items()}


def perspective_tag(value: "Perspective | str") -> str:
    """Normalize a perspective argument to its string tag.

    Accepts a Perspective member, one of "desc"/"rel"/"flu", or "shared".
    """
    if isinstance(value, Perspective):
        return value.value
    if value in PERSPECTIVE_WIRE_CODES:
        return value
    raise ValidationError(f"unknown perspective tag: {value!r}")
