"""Conditional-model contract shared by the exact, tabular and remote backends.

A model answers one kind of query: given a partially filled canvas, report
the conditional distribution at every masked cell.  Reports carry entropy,
top candidates, any explicitly queried token log-probs, and (when asked) a
server-side sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from ..core import MaskedSequence
from ..errors import ModelError
from ..rng import position_sample_seed, sample_categorical, unit_uniform

LOGPROB_TOL = 1e-9


@dataclass(frozen=True)
class SampleSpec:
    temperature: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class QuerySpec:
    """What to return per masked position.

    top_k=None asks for the model's default (full distribution for exact
    backends).  query_tokens maps position -> token ids whose log-probs must
    be reported exactly.  sample requests one seeded draw per position.
    """

    top_k: Optional[int] = None
    query_tokens: dict = field(default_factory=dict)
    sample: Optional[SampleSpec] = None


@dataclass
class PositionReport:
    """Model output for one masked position; all log quantities in nats."""

    position: int
    entropy: float
    top: list  # [(token, logprob)] sorted by logprob descending
    queried: dict = field(default_factory=dict)  # token -> logprob
    sampled: Optional[int] = None

    def validate(self):
        if self.entropy < -LOGPROB_TOL:
            raise ModelError(f"negative entropy {self.entropy} at position {self.position}")
        logprobs = [lp for _, lp in self.top]
        if any(b > a + LOGPROB_TOL for a, b in zip(logprobs, logprobs[1:])):
            raise ModelError(f"top list not sorted descending at position {self.position}")
        if any(lp > LOGPROB_TOL for lp in logprobs):
            raise ModelError(f"top log-prob > 0 at position {self.position}")
        if any(lp > LOGPROB_TOL for lp in self.queried.values()):
            raise ModelError(f"queried log-prob > 0 at position {self.position}")
        return self

    def logprob_of(self, token: int) -> float:
        """Log-prob of a token from the report's top/queried entries."""
        for t, lp in self.top:
            if t == token:
                return lp
        if token in self.queried:
            return self.queried[token]
        raise ModelError(
            f"log-prob of token {token} at position {self.position} not present in report; "
            f"widen top_k or query it explicitly"
        )

    def to_json(self) -> dict:
        return {
            "position": self.position,
            "entropy_nats": self.entropy,
            "top": [[t, lp] for t, lp in self.top],
            "queried": {str(t): lp for t, lp in self.queried.items()},
            "sampled": self.sampled,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PositionReport":
        return cls(
            position=int(obj["position"]),
            entropy=float(obj["entropy_nats"]),
            top=[(int(t), float(lp)) for t, lp in obj.get("top", [])],
            queried={int(t): float(lp) for t, lp in obj.get("queried", {}).items()},
            sampled=None if obj.get("sampled") is None else int(obj["sampled"]),
        )


@runtime_checkable
class ConditionalModel(Protocol):
    """Anything that can report conditionals for every masked cell."""

    @property
    def length(self) -> int: ...

    @property
    def vocab_size(self) -> int: ...

    def conditionals(self, seq: MaskedSequence, query: QuerySpec = QuerySpec()) -> list: ...


def masked_log(p: np.ndarray) -> np.ndarray:
    """log p with exact zeros mapped to -inf, no warnings."""
    out = np.full_like(p, -np.inf)
    np.log(p, out=out, where=p > 0)
    return out


def entropy_nats(probs: np.ndarray) -> float:
    """-sum p ln p with 0 ln 0 = 0, clamped at 0 against rounding."""
    p = np.asarray(probs, dtype=float)
    logp = masked_log(p)
    return max(float(-(p * np.where(p > 0, logp, 0.0)).sum()), 0.0)


def report_from_distribution(
    position: int,
    probs: np.ndarray,
    query: QuerySpec = QuerySpec(),
) -> PositionReport:
    """Build a report from a full conditional distribution.

    Used by the in-process backends, so entropy is always over the full
    distribution regardless of top_k truncation.  Ties in the top ordering
    break toward the smaller token id for reproducibility.
    """
    p = np.asarray(probs, dtype=float)
    logp = masked_log(p)
    entropy = max(float(-(p * np.where(p > 0, logp, 0.0)).sum()), 0.0)

    order = np.argsort(-p, kind="stable")  # stable: ties keep smaller token first
    if query.top_k is not None:
        order = order[: query.top_k]
    top = [(int(t), float(logp[t])) for t in order if p[t] > 0.0]

    queried = {}
    for token in query.query_tokens.get(position, ()):  # exact per-token log-probs
        queried[int(token)] = float(logp[token]) if p[token] > 0 else -math.inf

    sampled = None
    if query.sample is not None:
        scaled = p
        if query.sample.temperature != 1.0:
            scaled = np.exp(logp / query.sample.temperature)
            scaled = scaled / scaled.sum()
        u = unit_uniform(position_sample_seed(query.sample.seed, position))
        sampled = sample_categorical(scaled, u)

    return PositionReport(
        position=position,
        entropy=entropy,
        top=top,
        queried=queried,
        sampled=sampled,
    )
