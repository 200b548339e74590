"""Core domain types: token canvas, infilling template, decode policy, trace.

All entropies and log quantities are in nats.  Every type serializes to
JSON with stable field names; DecodeTrace is emitted as one JSON object
per line when streamed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

from .errors import ConfigError, LengthError, OverlapError


@dataclass(frozen=True)
class Vocab:
    """Token id space: real ids are 0..size-1, mask_id is a reserved sentinel."""

    size: int
    eos_id: int
    mask_id: int
    pad_id: int

    def __post_init__(self):
        if self.size < 2:
            raise ConfigError(f"vocab size must be >= 2, got {self.size}")
        for name in ("eos_id", "pad_id"):
            tok = getattr(self, name)
            if not 0 <= tok < self.size:
                raise ConfigError(f"{name}={tok} out of range for vocab size {self.size}")
        if 0 <= self.mask_id < self.size:
            raise ConfigError(
                f"mask_id={self.mask_id} collides with real token ids (size {self.size})"
            )

    def to_json(self) -> dict:
        return {
            "size": self.size,
            "eos_id": self.eos_id,
            "mask_id": self.mask_id,
            "pad_id": self.pad_id,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocab":
        return cls(
            size=int(obj["size"]),
            eos_id=int(obj["eos_id"]),
            mask_id=int(obj["mask_id"]),
            pad_id=int(obj["pad_id"]),
        )

    @classmethod
    def simple(cls, size: int, eos_id: Optional[int] = None, pad_id: Optional[int] = None) -> "Vocab":
        """Convention used by the synthetic tasks: mask sits just past the real ids."""
        if eos_id is None:
            eos_id = size - 1
        if pad_id is None:
            pad_id = size - 2 if size >= 3 else size - 1
        return cls(size=size, eos_id=eos_id, mask_id=size, pad_id=pad_id)


class MaskedSequence:
    """Fixed-length token canvas with per-position mask state.

    cells[i] is None while position i is masked and a token id once filled.
    Filled cells never revert to masked within one decode session.
    """

    __slots__ = ("cells", "context")

    def __init__(self, cells: Sequence[Optional[int]], context: Sequence[int] = ()):
        self.cells: list = [None if c is None else int(c) for c in cells]
        self.context: list = [int(t) for t in context]
        if not self.cells:
            raise LengthError("canvas length must be positive")

    @classmethod
    def fully_masked(cls, length: int, context: Sequence[int] = ()) -> "MaskedSequence":
        return cls([None] * length, context)

    @property
    def length(self) -> int:
        return len(self.cells)

    def is_masked(self, position: int) -> bool:
        return self.cells[position] is None

    def fill(self, position: int, token: int) -> None:
        if not 0 <= position < len(self.cells):
            raise LengthError(f"position {position} outside canvas of length {len(self.cells)}")
        if self.cells[position] is not None:
            raise ConfigError(f"position {position} already filled; remasking is not allowed")
        if token < 0:
            raise ConfigError(f"token id must be non-negative, got {token}")
        self.cells[position] = int(token)

    def masked_positions(self, within: Optional[tuple] = None) -> list:
        lo, hi = (0, len(self.cells)) if within is None else within
        lo, hi = max(lo, 0), min(hi, len(self.cells))
        return [i for i in range(lo, hi) if self.cells[i] is None]

    def filled_items(self) -> list:
        return [(i, c) for i, c in enumerate(self.cells) if c is not None]

    def tokens(self) -> list:
        """Final token list; raises if any cell is still masked."""
        if any(c is None for c in self.cells):
            raise ConfigError("sequence still has masked cells")
        return list(self.cells)

    def clone(self) -> "MaskedSequence":
        return MaskedSequence(self.cells, self.context)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MaskedSequence)
            and self.cells == other.cells
            and self.context == other.context
        )

    def __repr__(self) -> str:
        body = "".join("." if c is None else str(c) for c in self.cells)
        return f"MaskedSequence({body!r}, context={self.context})"

    def to_json(self) -> dict:
        return {"length": len(self.cells), "cells": list(self.cells), "context": list(self.context)}

    @classmethod
    def from_json(cls, obj: dict) -> "MaskedSequence":
        seq = cls(obj["cells"], obj.get("context", ()))
        if "length" in obj and int(obj["length"]) != seq.length:
            raise LengthError(f"length field {obj['length']} != {seq.length} cells")
        return seq


def _check_interval(name: str, span: tuple) -> tuple:
    lo, hi = int(span[0]), int(span[1])
    if lo < 0 or hi < lo:
        raise ConfigError(f"{name} must be a half-open interval with 0 <= start <= end, got {span}")
    return (lo, hi)


@dataclass(frozen=True)
class Template:
    """Canvas partition: reasoning span, delimiter fill, answer span.

    The delimiter tokens occupy exactly the gap between the two spans.  When
    prefilled_answer is set the canvas starts with the answer block filled
    (posterior mode).
    """

    reasoning_span: tuple
    answer_span: tuple
    delimiter_tokens: tuple = ()
    prefilled_answer: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "reasoning_span", _check_interval("reasoning_span", self.reasoning_span))
        object.__setattr__(self, "answer_span", _check_interval("answer_span", self.answer_span))
        object.__setattr__(self, "delimiter_tokens", tuple(int(t) for t in self.delimiter_tokens))
        if self.prefilled_answer is not None:
            object.__setattr__(self, "prefilled_answer", tuple(int(t) for t in self.prefilled_answer))

        r_lo, r_hi = self.reasoning_span
        a_lo, a_hi = self.answer_span
        if r_hi > a_lo:
            raise OverlapError(
                f"reasoning_span {self.reasoning_span} must precede and not overlap "
                f"answer_span {self.answer_span}"
            )
        gap = a_lo - r_hi
        if len(self.delimiter_tokens) != gap:
            raise OverlapError(
                f"delimiter has {len(self.delimiter_tokens)} tokens but the gap between "
                f"spans is {gap}"
            )
        if self.prefilled_answer is not None and len(self.prefilled_answer) != a_hi - a_lo:
            raise LengthError(
                f"prefilled_answer has {len(self.prefilled_answer)} tokens for an answer "
                f"span of {a_hi - a_lo}"
            )

    def answer_positions(self) -> list:
        return list(range(*self.answer_span))

    def reasoning_positions(self) -> list:
        return list(range(*self.reasoning_span))

    def with_answer(self, answer: Sequence[int]) -> "Template":
        return Template(self.reasoning_span, self.answer_span, self.delimiter_tokens, tuple(answer))

    def to_json(self) -> dict:
        return {
            "reasoning_span": list(self.reasoning_span),
            "delimiter_tokens": list(self.delimiter_tokens),
            "answer_span": list(self.answer_span),
            "prefilled_answer": None if self.prefilled_answer is None else list(self.prefilled_answer),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Template":
        return cls(
            reasoning_span=tuple(obj["reasoning_span"]),
            delimiter_tokens=tuple(obj.get("delimiter_tokens", ())),
            answer_span=tuple(obj["answer_span"]),
            prefilled_answer=None
            if obj.get("prefilled_answer") is None
            else tuple(obj["prefilled_answer"]),
        )


# ---------------------------------------------------------------------------
# Decode policy: order rule, token choice, block size, early exit.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LeftToRight:
    def to_json(self) -> dict:
        return {"kind": "left_to_right"}


@dataclass(frozen=True)
class AnyOrderMinEntropy:
    def to_json(self) -> dict:
        return {"kind": "min_entropy"}


@dataclass(frozen=True)
class FixedK:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"fixed-k count must be >= 1, got {self.k}")

    def to_json(self) -> dict:
        return {"kind": "fixed_k", "k": self.k}


@dataclass(frozen=True)
class Med:
    """Adaptive parallel order: unmask every position with entropy below the
    threshold (ascending entropy, at most k_max), min-entropy fallback."""

    threshold: float
    k_max: int

    def __post_init__(self):
        if self.threshold < 0:
            raise ConfigError(f"entropy threshold must be >= 0 nats, got {self.threshold}")
        if self.k_max < 1:
            raise ConfigError(f"k_max must be >= 1, got {self.k_max}")

    def to_json(self) -> dict:
        return {"kind": "med", "lambda": self.threshold, "k_max": self.k_max}


@dataclass(frozen=True)
class ArMed:
    """Contiguous left-to-right variant of Med: extend from the leftmost
    candidate while entropies stay under the threshold, leftmost fallback."""

    threshold: float
    k_max: int

    def __post_init__(self):
        if self.threshold < 0:
            raise ConfigError(f"entropy threshold must be >= 0 nats, got {self.threshold}")
        if self.k_max < 1:
            raise ConfigError(f"k_max must be >= 1, got {self.k_max}")

    def to_json(self) -> dict:
        return {"kind": "ar_med", "lambda": self.threshold, "k_max": self.k_max}


OrderPolicy = Union[LeftToRight, AnyOrderMinEntropy, FixedK, Med, ArMed]


def order_from_json(obj: dict) -> OrderPolicy:
    kind = obj.get("kind")
    if kind == "left_to_right":
        return LeftToRight()
    if kind == "min_entropy":
        return AnyOrderMinEntropy()
    if kind == "fixed_k":
        return FixedK(int(obj["k"]))
    if kind == "med":
        return Med(float(obj["lambda"]), int(obj["k_max"]))
    if kind == "ar_med":
        return ArMed(float(obj["lambda"]), int(obj["k_max"]))
    raise ConfigError(f"unknown order policy kind: {kind!r}")


@dataclass(frozen=True)
class Greedy:
    def to_json(self) -> dict:
        return {"kind": "greedy"}


@dataclass(frozen=True)
class Sampled:
    temperature: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"sampling temperature must be > 0, got {self.temperature}")

    def to_json(self) -> dict:
        return {"kind": "sampled", "temperature": self.temperature}


TokenChoice = Union[Greedy, Sampled]


def token_choice_from_json(obj: dict) -> TokenChoice:
    kind = obj.get("kind")
    if kind == "greedy":
        return Greedy()
    if kind == "sampled":
        return Sampled(float(obj.get("temperature", 1.0)))
    raise ConfigError(f"unknown token choice kind: {kind!r}")


@dataclass(frozen=True)
class DecodePolicy:
    order: OrderPolicy
    block_size: int
    token_choice: TokenChoice = Greedy()
    early_exit_gamma: Optional[float] = None
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")
        if self.early_exit_gamma is not None and self.early_exit_gamma < 0:
            raise ConfigError(f"early_exit_gamma must be >= 0 nats, got {self.early_exit_gamma}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")

    def to_json(self) -> dict:
        return {
            "order": self.order.to_json(),
            "block_size": self.block_size,
            "token_choice": self.token_choice.to_json(),
            "early_exit_gamma": self.early_exit_gamma,
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DecodePolicy":
        return cls(
            order=order_from_json(obj["order"]),
            block_size=int(obj["block_size"]),
            token_choice=token_choice_from_json(obj.get("token_choice", {"kind": "greedy"})),
            early_exit_gamma=None
            if obj.get("early_exit_gamma") is None
            else float(obj["early_exit_gamma"]),
            max_steps=None if obj.get("max_steps") is None else int(obj["max_steps"]),
        )


# ---------------------------------------------------------------------------
# Decode traces.
# ---------------------------------------------------------------------------


class DecodedCell(NamedTuple):
    position: int
    token: int
    logprob: float
    entropy: float


@dataclass
class StepRecord:
    """One engine step: the positions filled by one model call."""

    decoded: list  # list[DecodedCell], sorted by position
    answer_hub: Optional[float] = None
    block_index: int = 0

    def __post_init__(self):
        self.decoded = [DecodedCell(*d) for d in self.decoded]
        positions = [d.position for d in self.decoded]
        if positions != sorted(positions):
            raise ConfigError("decoded entries must be sorted by position")
        if any(d.entropy < 0 for d in self.decoded):
            raise ConfigError("entropies must be >= 0")

    def positions(self) -> list:
        return [d.position for d in self.decoded]

    def to_json(self) -> dict:
        return {
            "decoded": [[d.position, d.token, d.logprob, d.entropy] for d in self.decoded],
            "answer_hub": self.answer_hub,
            "block_index": self.block_index,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StepRecord":
        return cls(
            decoded=[DecodedCell(int(p), int(t), float(lp), float(h)) for p, t, lp, h in obj["decoded"]],
            answer_hub=None if obj.get("answer_hub") is None else float(obj["answer_hub"]),
            block_index=int(obj.get("block_index", 0)),
        )


@dataclass(frozen=True)
class ExitReason:
    kind: str  # "completed" | "early_exit" | "max_steps"
    step: Optional[int] = None

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.step is not None:
            out["step"] = self.step
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ExitReason":
        return cls(kind=obj["kind"], step=obj.get("step"))


def completed() -> ExitReason:
    return ExitReason("completed")


def early_exit(step: int) -> ExitReason:
    return ExitReason("early_exit", step)


def max_steps() -> ExitReason:
    return ExitReason("max_steps")


@dataclass
class DecodeTrace:
    """Step-by-step record of one decode session.

    nfe always equals len(steps): one model call per step, including the
    step on which an early exit triggered.
    """

    steps: list = field(default_factory=list)
    nfe: int = 0
    exit: ExitReason = field(default_factory=completed)
    schedule_logprob: float = 0.0

    def decoded_positions(self) -> list:
        out = []
        for step in self.steps:
            out.extend(step.positions())
        return out

    def to_json(self) -> dict:
        return {
            "steps": [s.to_json() for s in self.steps],
            "nfe": self.nfe,
            "exit": self.exit.to_json(),
            "schedule_logprob": self.schedule_logprob,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DecodeTrace":
        return cls(
            steps=[StepRecord.from_json(s) for s in obj["steps"]],
            nfe=int(obj["nfe"]),
            exit=ExitReason.from_json(obj["exit"]),
            schedule_logprob=float(obj["schedule_logprob"]),
        )


# ---------------------------------------------------------------------------
# Canvas construction.
# ---------------------------------------------------------------------------


def new_canvas(
    context: Sequence[int],
    template: Optional[Template],
    generation_length: int,
) -> MaskedSequence:
    """Build the initial canvas: delimiter (and any prefilled answer) filled,
    every other generation cell masked."""
    if generation_length < 1:
        raise LengthError(f"generation_length must be >= 1, got {generation_length}")
    seq = MaskedSequence.fully_masked(generation_length, context)
    if template is None:
        return seq
    r_lo, r_hi = template.reasoning_span
    a_lo, a_hi = template.answer_span
    if a_hi > generation_length or r_hi > generation_length:
        raise LengthError(
            f"template spans (reasoning {template.reasoning_span}, answer {template.answer_span}) "
            f"exceed canvas length {generation_length}"
        )
    for offset, token in enumerate(template.delimiter_tokens):
        seq.fill(r_hi + offset, token)
    if template.prefilled_answer is not None:
        for offset, token in enumerate(template.prefilled_answer):
            seq.fill(a_lo + offset, token)
    return seq


def masked_positions(seq: MaskedSequence, within: Optional[tuple] = None) -> list:
    """Ascending masked positions, optionally restricted to a half-open interval."""
    return seq.masked_positions(within)
