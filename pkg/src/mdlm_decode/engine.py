"""The decode loop.

One Session drives one canvas to completion: each step makes exactly one
model call covering every masked cell, hands the block-window candidates to
the policy's selector, fills the selected positions, and appends a
StepRecord.  With a template active, the same call's answer-cell entropies
give the answer-uncertainty bound for free; when that bound drops below the
exit threshold the remaining reasoning cells are padded without further
model calls and decoding moves on to the answer block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import (
    DecodedCell,
    DecodePolicy,
    DecodeTrace,
    Greedy,
    MaskedSequence,
    Sampled,
    StepRecord,
    Template,
    Vocab,
    early_exit,
    max_steps,
)
from .errors import (
    ConfigError,
    InconsistentTrace,
    ModelError,
    NoProgress,
)
from .models.base import QuerySpec, SampleSpec
from .rng import derive_seed
from .schedulers import block_window, select


@dataclass
class Session:
    """One decode run: model, canvas, policy and the trace being built."""

    model: object
    canvas: MaskedSequence
    policy: DecodePolicy
    vocab: Vocab
    template: Optional[Template] = None
    seed: int = 0
    trace: DecodeTrace = field(default_factory=DecodeTrace)


@dataclass(frozen=True)
class ExitDecision:
    should_exit: bool
    hub: float


def maybe_early_exit(answer_reports, gamma: float) -> ExitDecision:
    """Exit when the summed answer-cell entropies fall strictly below gamma.

    The sum of per-cell entropies upper-bounds the joint answer entropy, so
    a small value certifies the model has converged on an answer.  gamma=0
    never exits.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    hub = float(sum(r.entropy for r in answer_reports))
    return ExitDecision(should_exit=hub < gamma, hub=hub)


def _choose_token(report, token_choice) -> tuple:
    """(token, logprob) for one selected position under the policy's rule."""
    if isinstance(token_choice, Greedy):
        if not report.top:
            raise ModelError(f"empty top list at position {report.position}")
        return report.top[0]
    if isinstance(token_choice, Sampled):
        if report.sampled is None:
            raise ModelError(
                f"sampling requested but the model returned no sample at position {report.position}"
            )
        return report.sampled, report.logprob_of(report.sampled)
    raise ConfigError(f"unknown token choice: {token_choice!r}")


def decode(session: Session):
    """Run the session to completion; returns (final sequence, trace).

    The trace's nfe equals its step count: one model call per step,
    including the step on which an early exit triggers (that step still
    fills its selection before the remaining reasoning cells are padded).
    """
    canvas = session.canvas
    policy = session.policy
    template = session.template
    trace = session.trace

    if not canvas.masked_positions():
        raise ConfigError("canvas has no masked cells to decode")

    step_budget = policy.max_steps
    if step_budget is None:
        step_budget = len(canvas.masked_positions())

    if template is not None:
        answer_lo = template.answer_span[0]
        regions = [(0, answer_lo), (answer_lo, canvas.length)]
        answer_cells = template.answer_positions()
    else:
        regions = [(0, canvas.length)]
        answer_cells = []

    for phase, region in enumerate(regions):
        reasoning_phase = template is not None and phase == 0
        while canvas.masked_positions(region):
            if len(trace.steps) >= step_budget:
                trace.exit = max_steps()
                trace.nfe = len(trace.steps)
                return canvas, trace

            query = QuerySpec()
            if isinstance(policy.token_choice, Sampled):
                query = QuerySpec(
                    sample=SampleSpec(
                        temperature=policy.token_choice.temperature,
                        seed=derive_seed(session.seed, "step", len(trace.steps)),
                    )
                )
            reports = session.model.conditionals(canvas, query)
            by_position = {r.position: r for r in reports}
            if set(by_position) != set(canvas.masked_positions()):
                raise ModelError("model reports do not cover exactly the masked cells")

            masked_answer = [p for p in answer_cells if canvas.is_masked(p)]
            answer_hub = (
                float(sum(by_position[p].entropy for p in masked_answer)) if masked_answer else None
            )

            window = block_window(canvas, policy.block_size, region)
            candidates = [by_position[p] for p in canvas.masked_positions(window)]
            if not candidates:
                raise NoProgress(f"no candidates in window {window} of region {region}")
            selection = select(policy.order, candidates)

            decoded = []
            for position in selection.positions:
                token, logprob = _choose_token(by_position[position], policy.token_choice)
                canvas.fill(position, token)
                decoded.append(
                    DecodedCell(position, token, logprob, by_position[position].entropy)
                )
                trace.schedule_logprob += logprob

            trace.steps.append(
                StepRecord(
                    decoded=decoded,
                    answer_hub=answer_hub,
                    block_index=(window[0] - region[0]) // policy.block_size,
                )
            )

            if (
                reasoning_phase
                and policy.early_exit_gamma is not None
                and masked_answer
                and maybe_early_exit(
                    [by_position[p] for p in masked_answer], policy.early_exit_gamma
                ).should_exit
            ):
                trace.exit = early_exit(len(trace.steps) - 1)
                for position in canvas.masked_positions(region):
                    canvas.fill(position, session.vocab.pad_id)
                break

    trace.nfe = len(trace.steps)
    if trace.exit.kind == "completed" and canvas.masked_positions():
        raise NoProgress("decode finished with masked cells remaining")
    return canvas, trace


def decode_posterior(session: Session):
    """Decode only the reasoning cells of an answer-prefilled template.

    Returns (reasoning tokens, trace).  With an exact model and one-cell
    steps this samples reasoning traces from the true posterior given the
    prefilled answer.
    """
    if session.template is None or session.template.prefilled_answer is None:
        raise ConfigError("posterior decoding needs a template with prefilled_answer")
    if not isinstance(session.policy.token_choice, Sampled):
        raise ConfigError("posterior decoding requires a Sampled token choice")
    canvas, trace = decode(session)
    lo, hi = session.template.reasoning_span
    reasoning = [canvas.cells[i] for i in range(lo, hi)]
    return reasoning, trace


def replay(
    trace: DecodeTrace,
    initial_canvas: MaskedSequence,
    vocab: Optional[Vocab] = None,
    check: bool = True,
):
    """Re-apply a trace's fills to a fresh copy of its initial canvas.

    Early-exit traces need the vocab to reproduce the pad fills of skipped
    reasoning cells.  With check=True the replay validates step structure,
    token ids against the vocab, and the recorded schedule_logprob.
    """
    canvas = initial_canvas.clone()
    if check and trace.nfe != len(trace.steps):
        raise InconsistentTrace(f"nfe {trace.nfe} != number of steps {len(trace.steps)}")
    logprob_sum = 0.0
    for index, step in enumerate(trace.steps):
        for cell in step.decoded:
            if not 0 <= cell.position < canvas.length:
                raise InconsistentTrace(f"step {index}: position {cell.position} out of range")
            if not canvas.is_masked(cell.position):
                raise InconsistentTrace(f"step {index}: position {cell.position} already filled")
            if check and vocab is not None and not 0 <= cell.token < vocab.size:
                raise InconsistentTrace(
                    f"step {index}: token {cell.token} invalid for vocab size {vocab.size}"
                )
            canvas.fill(cell.position, cell.token)
            logprob_sum += cell.logprob
    if check and abs(logprob_sum - trace.schedule_logprob) > 1e-6:
        raise InconsistentTrace(
            f"recorded schedule_logprob {trace.schedule_logprob} != replayed {logprob_sum}"
        )
    if trace.exit.kind == "early_exit":
        remaining = canvas.masked_positions()
        if remaining:
            if vocab is None:
                raise InconsistentTrace("replaying an early-exit trace requires the vocab")
            for position in remaining:
                canvas.fill(position, vocab.pad_id)
    return canvas
