"""Answer-aware scoring and schedule diagnostics.

phi scores a partial reasoning trace by how much log-probability the
masked answer block assigns to a gold answer; chain filtering averages phi
while revealing a finished chain left to right.  The schedule diagnostics
enumerate the exact sequence distribution a decoding policy induces on a
tabular model and compare policies by KL.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import (
    DecodePolicy,
    Greedy,
    MaskedSequence,
    Sampled,
    StepRecord,
    Template,
    new_canvas,
)
from .errors import CapExceeded, ConfigError, LengthMismatch, SupportMismatch
from .models.base import QuerySpec
from .schedulers import block_window, select


@dataclass(frozen=True)
class TraceScore:
    """phi (<= 0 nats) and the answer entropy bound at one reveal step."""

    phi: float
    hub: float
    step_index: int
    fraction_unmasked: float


@dataclass(frozen=True)
class ChainScore:
    mean: float
    scores: tuple

    def phi_curve(self) -> list:
        return [s.phi for s in self.scores]

    def hub_curve(self) -> list:
        return [s.hub for s in self.scores]


def phi_score(
    model,
    canvas: MaskedSequence,
    template: Template,
    gold_answer,
    step_index: int = 0,
) -> TraceScore:
    """Score a partially revealed canvas against a gold answer in one call.

    phi sums the log-probability each masked answer cell assigns to the
    gold token; hub sums the same cells' entropies.
    """
    gold_answer = [int(t) for t in gold_answer]
    lo, hi = template.answer_span
    if len(gold_answer) != hi - lo:
        raise LengthMismatch(
            f"gold answer has {len(gold_answer)} tokens for an answer span of {hi - lo}"
        )
    answer_positions = template.answer_positions()
    if any(not canvas.is_masked(p) for p in answer_positions):
        raise ConfigError("phi requires every answer cell to be masked")

    query = QuerySpec(query_tokens={p: [gold_answer[p - lo]] for p in answer_positions})
    reports = {r.position: r for r in model.conditionals(canvas, query)}

    phi = sum(reports[p].queried[gold_answer[p - lo]] for p in answer_positions)
    hub = sum(reports[p].entropy for p in answer_positions)

    r_lo, r_hi = template.reasoning_span
    span = r_hi - r_lo
    filled = sum(1 for p in range(r_lo, r_hi) if not canvas.is_masked(p))
    fraction = filled / span if span else 1.0
    return TraceScore(phi=float(phi), hub=float(hub), step_index=step_index, fraction_unmasked=fraction)


def chain_filter_score(
    model,
    context,
    template: Template,
    reasoning,
    gold_answer,
    stride: int = 1,
) -> ChainScore:
    """Average phi over left-to-right reveals of a finished reasoning chain.

    Step t fills the first t reasoning tokens and scores the masked answer
    block, for t = 0, stride, 2*stride, ... up to the full chain; the curve
    therefore has ceil((len(reasoning)+1)/stride) points and costs one model
    call each.
    """
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    reasoning = [int(t) for t in reasoning]
    lo, hi = template.reasoning_span
    if len(reasoning) != hi - lo:
        raise LengthMismatch(
            f"chain has {len(reasoning)} tokens for a reasoning span of {hi - lo}"
        )
    bare = Template(template.reasoning_span, template.answer_span, template.delimiter_tokens)
    scores = []
    for t in range(0, len(reasoning) + 1, stride):
        canvas = new_canvas(context, bare, model.length)
        for offset in range(t):
            canvas.fill(lo + offset, reasoning[offset])
        scores.append(phi_score(model, canvas, bare, gold_answer, step_index=t))
    mean = sum(s.phi for s in scores) / len(scores)
    return ChainScore(mean=float(mean), scores=tuple(scores))


def per_step_kl_bound(step: StepRecord) -> float:
    """Entropy sum of one parallel step: the certified KL budget of decoding
    those positions independently instead of jointly."""
    if not step.decoded:
        raise ConfigError("step has no decoded positions")
    return float(sum(cell.entropy for cell in step.decoded))


# ---------------------------------------------------------------------------
# Exact induced distributions of decoding schedules.
# ---------------------------------------------------------------------------


def _step_distribution(report, token_choice) -> list:
    """[(token, prob)] for one selected position under the token choice."""
    if isinstance(token_choice, Greedy):
        token, _ = report.top[0]
        return [(token, 1.0)]
    if isinstance(token_choice, Sampled):
        pairs = [(t, math.exp(lp)) for t, lp in report.top]
        if token_choice.temperature != 1.0:
            pairs = [(t, p ** (1.0 / token_choice.temperature)) for t, p in pairs]
        total = sum(p for _, p in pairs)
        return [(t, p / total) for t, p in pairs if p > 0]
    raise ConfigError(f"unknown token choice: {token_choice!r}")


def induced_distribution(
    model,
    policy: DecodePolicy,
    context=(),
    cap: int = 10**6,
) -> dict:
    """Exact distribution over finished sequences induced by a policy.

    Walks every branch of the decode tree: at each state one model call's
    reports feed the policy's selector, and the selected positions expand
    with their conditionally independent token probabilities (multi-token
    steps multiply per-position marginals).  Leaves map token tuples to
    probabilities that sum to 1.
    """
    start = MaskedSequence.fully_masked(model.length, context)
    leaves: dict = {}
    stack = [(start, 1.0)]
    expansions = 0
    while stack:
        canvas, prob = stack.pop()
        masked = canvas.masked_positions()
        if not masked:
            key = tuple(canvas.cells)
            leaves[key] = leaves.get(key, 0.0) + prob
            continue
        reports = {r.position: r for r in model.conditionals(canvas, QuerySpec())}
        window = block_window(canvas, policy.block_size)
        candidates = [reports[p] for p in canvas.masked_positions(window)]
        selection = select(policy.order, candidates)
        branches = [((), 1.0)]
        for position in selection.positions:
            step_dist = _step_distribution(reports[position], policy.token_choice)
            branches = [
                (tokens + ((position, t),), p * tp)
                for tokens, p in branches
                for t, tp in step_dist
            ]
        expansions += len(branches)
        if expansions > cap:
            raise CapExceeded(f"decode tree exceeded {cap} expansions")
        for fills, branch_prob in branches:
            child = canvas.clone()
            for position, token in fills:
                child.fill(position, token)
            stack.append((child, prob * branch_prob))
    return leaves


def kl_divergence(dist_a: dict, dist_b: dict) -> float:
    """KL(a || b) over outcome dictionaries; mass of a outside b's support
    is an error, not a clip."""
    total = 0.0
    for outcome, pa in dist_a.items():
        if pa <= 0:
            continue
        pb = dist_b.get(outcome, 0.0)
        if pb <= 0:
            raise SupportMismatch(
                f"first distribution has mass {pa} on {outcome} where the second has none",
                outcome=outcome,
            )
        total += pa * math.log(pa / pb)
    return max(total, 0.0)


def schedule_kl_exact(
    model,
    policy_a: DecodePolicy,
    policy_b: DecodePolicy,
    context=(),
    cap: int = 10**6,
) -> float:
    """KL between the sequence distributions two policies induce on an exact
    model, by full enumeration of both decode trees."""
    dist_a = induced_distribution(model, policy_a, context, cap)
    dist_b = induced_distribution(model, policy_b, context, cap)
    return kl_divergence(dist_a, dist_b)
