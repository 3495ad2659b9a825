"""Subjective-logic reputation for CDC workers.

An MSP's *local* opinion of a worker comes from its own tally of positive and
negative interactions. Other MSPs act as recommenders: their local opinions are
weighted by social tie and familiarity, averaged into a *recommended* opinion,
and fused with the local one into a *composite* opinion. Every opinion is
collapsed to a scalar reputation ``b + gamma * u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import AllWeightsZero, DegenerateFusion

_TOL = 1e-9


@dataclass(frozen=True)
class Opinion:
    """A (belief, disbelief, uncertainty) triple summing to one."""

    belief: float
    disbelief: float
    uncertainty: float

    def __post_init__(self) -> None:
        for name in ("belief", "disbelief", "uncertainty"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < -_TOL or v > 1 + _TOL:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        total = self.belief + self.disbelief + self.uncertainty
        if abs(total - 1.0) > _TOL:
            raise ValueError(f"opinion components must sum to 1, got {total}")

    @classmethod
    def vacuous(cls) -> "Opinion":
        return cls(0.0, 0.0, 1.0)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.belief, self.disbelief, self.uncertainty)


@dataclass(frozen=True)
class InteractionCounts:
    positive: int = 0
    negative: int = 0

    def __post_init__(self) -> None:
        if self.positive < 0 or self.negative < 0:
            raise ValueError("interaction counts must be nonnegative")


@dataclass(frozen=True)
class ReputationParams:
    """Weights and thresholds of the reputation model.

    Defaults follow the reference parameter table (sigma1=0.6, sigma2=0.4,
    threshold 0.6). ``gamma``, ``rep_min`` and ``rep_max`` are not published
    there and default to 0.5, 0 and 1.
    """

    sigma1: float = 0.6
    sigma2: float = 0.4
    gamma: float = 0.5
    rep_threshold: float = 0.6
    rep_max: float = 1.0
    rep_min: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.sigma2 < self.sigma1 < 1.0:
            raise ValueError("require 0 < sigma2 < sigma1 < 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 <= self.rep_min <= self.rep_threshold <= self.rep_max <= 1.0:
            raise ValueError("require 0 <= rep_min <= rep_threshold <= rep_max <= 1")


@dataclass(frozen=True)
class ServiceHistory:
    """Workers that have served a given principal (MSP or recommender)."""

    principal_id: object
    served_workers: frozenset = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "served_workers", frozenset(self.served_workers))


@dataclass(frozen=True)
class Recommendation:
    """One recommender's input: its social tie to the MSP and its local opinion."""

    tie: float
    opinion: Opinion


def local_opinion(counts: InteractionCounts, params: ReputationParams) -> Opinion:
    wp = params.sigma1 * counts.positive
    wn = params.sigma2 * counts.negative
    denom = wp + wn + 2.0
    return Opinion(wp / denom, wn / denom, 2.0 / denom)


def reputation_value(op: Opinion, gamma: float = 0.5) -> float:
    """Scalar reputation ``belief + gamma * uncertainty``."""
    return op.belief + gamma * op.uncertainty


def social_tie(h_i: ServiceHistory, h_r: ServiceHistory) -> float:
    """Jaccard overlap of two service histories; 0 when both are empty."""
    union = h_i.served_workers | h_r.served_workers
    if not union:
        return 0.0
    return len(h_i.served_workers & h_r.served_workers) / len(union)


def recommender_weights(ties: Sequence[float], local_ops: Sequence[Opinion]) -> list[float]:
    """Normalise tie * familiarity over the recommenders.

    Familiarity is ``belief + disbelief`` of the recommender's own opinion.
    Raises AllWeightsZero when no recommender carries any weight.
    """
    if len(ties) != len(local_ops) or not ties:
        raise ValueError("ties and opinions must be nonempty and of equal length")
    raw = [t * (op.belief + op.disbelief) for t, op in zip(ties, local_ops)]
    total = math.fsum(raw)
    if total <= 0.0:
        raise AllWeightsZero("no recommender has a positive tie-familiarity product")
    return [r / total for r in raw]


def recommended_opinion(weights: Sequence[float], local_ops: Sequence[Opinion]) -> Opinion:
    if len(weights) != len(local_ops) or not weights:
        raise ValueError("weights and opinions must be nonempty and of equal length")
    if abs(math.fsum(weights) - 1.0) > _TOL:
        raise ValueError("weights must sum to 1")
    b = math.fsum(w * op.belief for w, op in zip(weights, local_ops))
    d = math.fsum(w * op.disbelief for w, op in zip(weights, local_ops))
    u = math.fsum(w * op.uncertainty for w, op in zip(weights, local_ops))
    return _clean(b, d, u)


def fuse_opinions(local: Opinion, rec: Opinion) -> Opinion:
    ul, ur = local.uncertainty, rec.uncertainty
    denom = ul + ur - ur * ul
    if denom <= 0.0:
        raise DegenerateFusion("cannot fuse two dogmatic opinions (u = 0)")
    b = (local.belief * ur + rec.belief * ul) / denom
    d = (local.disbelief * ur + rec.disbelief * ul) / denom
    u = ur * ul / denom
    return _clean(b, d, u)


def composite_opinion(local: Opinion, recommendations: Iterable[Recommendation]) -> Opinion:
    """Fuse a local opinion with weighted recommendations.

    With no recommenders, or none carrying weight, the local opinion is
    returned unchanged (equivalent to fusing with the vacuous opinion).
    """
    recs = list(recommendations)
    if not recs:
        return local
    ops = [r.opinion for r in recs]
    try:
        weights = recommender_weights([r.tie for r in recs], ops)
    except AllWeightsZero:
        return local
    return fuse_opinions(local, recommended_opinion(weights, ops))


def composite_reputation(
    counts_local: InteractionCounts,
    recommendations: Iterable[Recommendation],
    params: ReputationParams,
) -> float:
    op = composite_opinion(local_opinion(counts_local, params), recommendations)
    return reputation_value(op, params.gamma)


def record_task_outcome(counts: InteractionCounts, outcome: str | bool) -> InteractionCounts:
    """Return counts with the matching tally incremented by one.

    ``outcome`` is ``"positive"``/``"negative"`` or a bool (True = positive).
    """
    if isinstance(outcome, str):
        if outcome not in ("positive", "negative"):
            raise ValueError(f"unknown outcome {outcome!r}")
        outcome = outcome == "positive"
    if outcome:
        return InteractionCounts(counts.positive + 1, counts.negative)
    return InteractionCounts(counts.positive, counts.negative + 1)


def counts_from_opinion(op: Opinion, params: ReputationParams) -> InteractionCounts:
    """Invert :func:`local_opinion` for an opinion produced from integer counts."""
    scale = 2.0 / op.uncertainty
    p = op.belief * scale / params.sigma1
    q = op.disbelief * scale / params.sigma2
    return InteractionCounts(int(round(p)), int(round(q)))


def _clean(b: float, d: float, u: float) -> Opinion:
    # Rounding can push a component a few ulps below zero or the sum off 1.
    b, d, u = max(b, 0.0), max(d, 0.0), max(u, 0.0)
    s = b + d + u
    return Opinion(b / s, d / s, u / s)
