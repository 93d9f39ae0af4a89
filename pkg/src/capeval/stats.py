"""Tie-aware Kendall rank correlation, significance testing, and reports.

Both tau variants are computed from exhaustive O(n^2) pair classification,
which is the contractual reference path (splits here are a few hundred
samples, so the quadratic cost is irrelevant). Ties are exact value
equality; the judgment pipeline only ever produces values that are means
of quarters, so equal scores compare equal.

tau_b = (P - Q) / sqrt((P + Q + T_x) (P + Q + T_y))
tau_c = 2 m (P - Q) / (n^2 (m - 1)),  m = min(#distinct x, #distinct y)

where T_x / T_y count pairs tied only in x / only in y.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, ValidationError


@dataclass(frozen=True)
class PairCounts:
    """Exhaustive classification of the n(n-1)/2 index pairs."""

    concordant: int
    discordant: int
    ties_x_only: int
    ties_y_only: int
    ties_both: int
    n: int

    @property
    def total_pairs(self) -> int:
        return self.n * (self.n - 1) // 2


def _as_vector(x: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def pair_counts(x: Sequence[float], y: Sequence[float]) -> PairCounts:
    """Classify every index pair as concordant/discordant/tied."""
    xv = _as_vector(x, "x")
    yv = _as_vector(y, "y")
    if len(xv) != len(yv):
        raise ValidationError(f"length mismatch: {len(xv)} vs {len(yv)}")
    n = len(xv)
    if n < 2:
        raise DegenerateInputError("need at least 2 observations")

    iu, ju = np.triu_indices(n, k=1)
    sx = np.sign(xv[iu] - xv[ju])
    sy = np.sign(yv[iu] - yv[ju])
    prod = sx * sy
    conc = int(np.count_nonzero(prod > 0))
    disc = int(np.count_nonzero(prod < 0))
    tx = int(np.count_nonzero((sx == 0) & (sy != 0)))
    ty = int(np.count_nonzero((sx != 0) & (sy == 0)))
    txy = int(np.count_nonzero((sx == 0) & (sy == 0)))
    return PairCounts(conc, disc, tx, ty, txy, n)


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-adjusted tau; undefined when either vector is fully tied."""
    c = pair_counts(x, y)
    fx = c.concordant + c.discordant + c.ties_x_only
    fy = c.concordant + c.discordant + c.ties_y_only
    if fx == 0 or fy == 0:
        raise DegenerateInputError(
            "tau_b undefined: one input is completely tied"
        )
    return (c.concordant - c.discordant) / math.sqrt(fx * fy)


def kendall_tau_c(x: Sequence[float], y: Sequence[float]) -> float:
    """Stuart's tau for rectangular contingency structure."""
    xv = _as_vector(x, "x")
    yv = _as_vector(y, "y")
    c = pair_counts(xv, yv)
    m = min(len(np.unique(xv)), len(np.unique(yv)))
    if m < 2:
        raise DegenerateInputError(
            "tau_c undefined: fewer than 2 distinct values in an input"
        )
    return 2.0 * m * (c.concordant - c.discordant) / (c.n * c.n * (m - 1))


@dataclass(frozen=True)
class SignificanceResult:
    metric_pair: str
    perspective: str
    p_value: float
    observed_delta: float
    resamples: int
    skipped_resamples: int

    def as_dict(self) -> dict:
        return {
            "metric_pair": self.metric_pair,
            "perspective": self.perspective,
            "p_value": self.p_value,
            "observed_delta": self.observed_delta,
            "resamples": self.resamples,
            "skipped_resamples": self.skipped_resamples,
        }


def significance_test(
    scores_a: Sequence[float],
    scores_b: Sequence[float],
    human: Sequence[float],
    perspective: str = "",
    resamples: int = 10_000,
    seed: int = 0,
    metric_pair: str = "a_vs_b",
    tau: Callable[[Sequence[float], Sequence[float]], float] = kendall_tau_c,
) -> SignificanceResult:
    """Two-sided paired bootstrap for H0: tau(a, human) = tau(b, human).

    Sample indices are resampled with replacement; the p-value is the
    smoothed two-sided percentile probability that the resampled tau
    difference crosses zero. Resamples on which either tau is degenerate
    are skipped and counted.
    """
    a = _as_vector(scores_a, "scores_a")
    b = _as_vector(scores_b, "scores_b")
    h = _as_vector(human, "human")
    if not (len(a) == len(b) == len(h)):
        raise ValidationError("score and judgment vectors must be aligned")
    observed = tau(a, h) - tau(b, h)

    rng = np.random.default_rng(seed)
    n = len(h)
    non_positive = 0
    non_negative = 0
    used = 0
    skipped = 0
    for _ in range(resamples):
        idx = rng.integers(0, n, size=n)
        try:
            delta = tau(a[idx], h[idx]) - tau(b[idx], h[idx])
        except DegenerateInputError:
            skipped += 1
            continue
        used += 1
        if delta <= 0.0:
            non_positive += 1
        if delta >= 0.0:
            non_negative += 1

    if used == 0:
        raise DegenerateInputError("all bootstrap resamples were degenerate")
    p = 2.0 * min(non_positive + 1, non_negative + 1) / (used + 1)
    return SignificanceResult(
        metric_pair=metric_pair,
        perspective=perspective,
        p_value=min(1.0, p),
        observed_delta=observed,
        resamples=used,
        skipped_resamples=skipped,
    )


def human_performance(
    per_evaluator_scores: Sequence[Sequence[float]],
    ground_truth: Sequence[float],
    variant: str = "c",
) -> float:
    """Mean tau of individual evaluators against the aggregated truth."""
    if not per_evaluator_scores:
        raise ValidationError("need at least one evaluator")
    if variant == "c":
        tau = kendall_tau_c
    elif variant == "b":
        tau = kendall_tau_b
    else:
        raise ValidationError(f"unknown tau variant {variant!r}")
    values = [tau(scores, ground_truth) for scores in per_evaluator_scores]
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class TauEntry:
    tau_b: float
    tau_c: float
    n: int

    def __post_init__(self) -> None:
        for v in (self.tau_b, self.tau_c):
            if not -1.0 <= v <= 1.0 + 1e-12:
                raise ValidationError(f"tau value {v} outside [-1, 1]")
        if self.n < 2:
            raise ValidationError("correlation entry needs n >= 2")


@dataclass
class CorrelationReport:
    """Per-split correlation of metric scores with human judgments."""

    split: str
    perspectives: dict[str, TauEntry]
    significance: list[SignificanceResult] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "split": self.split,
            "perspectives": {
                name: {"tau_b": e.tau_b, "tau_c": e.tau_c, "n": e.n}
                for name, e in self.perspectives.items()
            },
            "significance": [s.as_dict() for s in self.significance],
        }

    def to_json(self, extra: Optional[dict] = None) -> str:
        payload = self.as_dict()
        if extra:
            payload.update(extra)
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_tsv(self) -> str:
        lines = ["perspective\ttau_b\ttau_c\tn"]
        for name, e in self.perspectives.items():
            lines.append(f"{name}\t{e.tau_b:.6f}\t{e.tau_c:.6f}\t{e.n}")
        return "\n".join(lines) + "\n"
