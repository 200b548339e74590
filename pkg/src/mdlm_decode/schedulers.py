"""Position-selection policies.

Each selector is a pure function from the candidate reports of the current
block window to the set of positions decoded this step.  Entropy ties break
toward the smaller position everywhere so traces replay deterministically.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .core import (
    AnyOrderMinEntropy,
    ArMed,
    FixedK,
    LeftToRight,
    MaskedSequence,
    Med,
    OrderPolicy,
)
from .errors import ConfigError, EmptyCandidates


class SelectionRule(enum.Enum):
    LEFTMOST = "leftmost"
    MIN_ENTROPY = "min_entropy"
    FIXED_K = "fixed_k"
    UNDER_THRESHOLD = "under_threshold"
    FALLBACK_MIN_ENTROPY = "fallback_min_entropy"
    FALLBACK_LEFTMOST = "fallback_leftmost"


FALLBACK_RULES = (SelectionRule.FALLBACK_MIN_ENTROPY, SelectionRule.FALLBACK_LEFTMOST)


@dataclass(frozen=True)
class Selection:
    positions: tuple
    rationale: SelectionRule

    def __post_init__(self):
        if not self.positions:
            raise ConfigError("a selection cannot be empty")

    @property
    def is_fallback(self) -> bool:
        return self.rationale in FALLBACK_RULES


def _require(candidates) -> list:
    candidates = list(candidates)
    if not candidates:
        raise EmptyCandidates("no candidate positions to select from")
    return candidates


def select_left_to_right(candidates) -> Selection:
    """The single smallest candidate position."""
    candidates = _require(candidates)
    leftmost = min(candidates, key=lambda r: r.position)
    return Selection((leftmost.position,), SelectionRule.LEFTMOST)


def select_min_entropy(candidates, k: int) -> Selection:
    """The min(k, n) candidates with smallest entropy, position tie-break."""
    candidates = _require(candidates)
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    ranked = sorted(candidates, key=lambda r: (r.entropy, r.position))
    chosen = tuple(sorted(r.position for r in ranked[:k]))
    rule = SelectionRule.MIN_ENTROPY if k == 1 else SelectionRule.FIXED_K
    return Selection(chosen, rule)


def select_med(candidates, threshold: float, k_max: int) -> Selection:
    """Ascending-entropy positions strictly under the threshold, at most
    k_max; if none qualifies, the single min-entropy position."""
    candidates = _require(candidates)
    if threshold < 0 or k_max < 1:
        raise ConfigError("need threshold >= 0 and k_max >= 1")
    ranked = sorted(candidates, key=lambda r: (r.entropy, r.position))
    under = [r for r in ranked if r.entropy < threshold][:k_max]
    if not under:
        return Selection((ranked[0].position,), SelectionRule.FALLBACK_MIN_ENTROPY)
    return Selection(tuple(sorted(r.position for r in under)), SelectionRule.UNDER_THRESHOLD)


def select_ar_med(candidates, threshold: float, k_max: int) -> Selection:
    """From the leftmost candidate, extend through positionally consecutive
    candidates while entropy stays under the threshold; a gap or an
    over-threshold position stops the run.  If the leftmost itself fails,
    decode just the leftmost."""
    candidates = _require(candidates)
    if threshold < 0 or k_max < 1:
        raise ConfigError("need threshold >= 0 and k_max >= 1")
    by_position = {r.position: r for r in candidates}
    position = min(by_position)
    if by_position[position].entropy >= threshold:
        return Selection((position,), SelectionRule.FALLBACK_LEFTMOST)
    run = []
    while (
        len(run) < k_max
        and position in by_position
        and by_position[position].entropy < threshold
    ):
        run.append(position)
        position += 1
    return Selection(tuple(run), SelectionRule.UNDER_THRESHOLD)


def block_window(
    seq: MaskedSequence,
    block_size: int,
    region: Optional[tuple] = None,
) -> tuple:
    """Earliest block (aligned from the region start) still holding a masked
    cell.  Fully filled regions yield an empty interval."""
    if block_size < 1:
        raise ConfigError(f"block_size must be >= 1, got {block_size}")
    lo, hi = (0, seq.length) if region is None else region
    masked = seq.masked_positions((lo, hi))
    if not masked:
        return (lo, lo)
    first = masked[0]
    start = lo + ((first - lo) // block_size) * block_size
    return (start, min(start + block_size, hi))


def select(order: OrderPolicy, candidates) -> Selection:
    """Dispatch a policy's order rule over the window candidates."""
    if isinstance(order, LeftToRight):
        return select_left_to_right(candidates)
    if isinstance(order, AnyOrderMinEntropy):
        return select_min_entropy(candidates, 1)
    if isinstance(order, FixedK):
        return select_min_entropy(candidates, order.k)
    if isinstance(order, Med):
        return select_med(candidates, order.threshold, order.k_max)
    if isinstance(order, ArMed):
        return select_ar_med(candidates, order.threshold, order.k_max)
    raise ConfigError(f"unknown order policy: {order!r}")
