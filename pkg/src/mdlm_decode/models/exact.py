"""Exact tabular joint model: the brute-force oracle backend.

Stores the full joint p(x | c) over a tiny canvas (L <= 8, vocab <= 8) as a
dense array, so every conditional, joint-over-a-set and entropy is computed
by explicit marginalization.  This is the reference every sampler property
is verified against.
"""

from __future__ import annotations

import itertools
import json

import numpy as np

from ..core import MaskedSequence
from ..errors import CapExceeded, ConfigError, DegenerateConditional, LengthMismatch
from .base import QuerySpec, report_from_distribution

MAX_LENGTH = 8
MAX_VOCAB = 8
NORMALIZATION_TOL = 1e-12
DEFAULT_ENUM_CAP = 10**6


class ExactJointModel:
    """Normalized joint over V^L outcomes, queried by marginalization."""

    def __init__(self, joint: np.ndarray):
        joint = np.asarray(joint, dtype=float)
        if joint.ndim < 1 or joint.ndim > MAX_LENGTH:
            raise ConfigError(f"joint must have 1..{MAX_LENGTH} axes, got {joint.ndim}")
        vocab = joint.shape[0]
        if vocab < 1 or vocab > MAX_VOCAB or any(s != vocab for s in joint.shape):
            raise ConfigError(
                f"joint must be (V,)*L with V <= {MAX_VOCAB}, got shape {joint.shape}"
            )
        if np.any(joint < 0):
            raise ConfigError("joint contains negative mass")
        total = float(joint.sum())
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ConfigError(f"joint sums to {total}, not 1 within {NORMALIZATION_TOL}")
        self.joint = joint

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_probs(cls, probs, length: int = None, vocab_size: int = None) -> "ExactJointModel":
        arr = np.asarray(probs, dtype=float)
        if length is not None and vocab_size is not None:
            arr = arr.reshape((vocab_size,) * length)
        arr = arr / arr.sum()
        return cls(arr)

    @classmethod
    def from_logits(cls, logits, length: int, vocab_size: int) -> "ExactJointModel":
        arr = np.asarray(logits, dtype=float).reshape((vocab_size,) * length)
        arr = arr - arr.max()
        probs = np.exp(arr)
        return cls(probs / probs.sum())

    @classmethod
    def from_json(cls, obj: dict) -> "ExactJointModel":
        length = int(obj["length"])
        vocab = int(obj["vocab"])
        return cls.from_logits(obj["logits"], length, vocab)

    @classmethod
    def load(cls, path) -> "ExactJointModel":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(json.load(f))

    def to_json(self) -> dict:
        with np.errstate(divide="ignore"):
            logits = np.log(self.joint)
        # strict JSON has no -Infinity; the floor is deep enough that the
        # softmax round-trip maps floored cells back to exactly zero mass
        logits = np.maximum(logits, -1e6)
        return {
            "length": self.length,
            "vocab": self.vocab_size,
            "logits": logits.reshape(-1).tolist(),
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f)

    # -- contract ----------------------------------------------------------

    @property
    def length(self) -> int:
        return self.joint.ndim

    @property
    def vocab_size(self) -> int:
        return self.joint.shape[0]

    def _conditioned(self, seq: MaskedSequence) -> np.ndarray:
        """Unnormalized joint over the masked axes given the filled cells."""
        if seq.length != self.length:
            raise LengthMismatch(f"canvas length {seq.length} != model length {self.length}")
        index = []
        for cell in seq.cells:
            if cell is None:
                index.append(slice(None))
            else:
                if not 0 <= cell < self.vocab_size:
                    raise ConfigError(f"token {cell} out of range for vocab {self.vocab_size}")
                index.append(cell)
        return self.joint[tuple(index)]

    def conditionals(self, seq: MaskedSequence, query: QuerySpec = QuerySpec()) -> list:
        """One report per masked cell, from exact marginalization."""
        masked = seq.masked_positions()
        cond = self._conditioned(seq)
        mass = float(cond.sum()) if masked else float(cond)
        if mass <= 0.0:
            raise DegenerateConditional(
                "filled cells have zero probability under the joint; conditionals undefined"
            )
        reports = []
        for axis, position in enumerate(masked):
            other = tuple(a for a in range(len(masked)) if a != axis)
            marginal = cond.sum(axis=other) / mass
            reports.append(report_from_distribution(position, marginal, query))
        return reports

    def joint_conditional(
        self,
        seq: MaskedSequence,
        positions,
        cap: int = DEFAULT_ENUM_CAP,
    ) -> dict:
        """Normalized joint over assignments to `positions` given the filled
        cells, everything else marginalized.  Keys are assignment tuples in
        the order of `positions`."""
        positions = list(positions)
        masked = seq.masked_positions()
        masked_set = set(masked)
        if any(p not in masked_set for p in positions):
            raise ConfigError(f"positions {positions} must all be masked")
        if self.vocab_size ** len(positions) > cap:
            raise CapExceeded(
                f"{self.vocab_size}^{len(positions)} assignments exceed cap {cap}"
            )
        cond = self._conditioned(seq)
        mass = float(cond.sum())
        if mass <= 0.0:
            raise DegenerateConditional(
                "filled cells have zero probability under the joint; conditionals undefined"
            )
        axis_of = {pos: axis for axis, pos in enumerate(masked)}
        keep = [axis_of[p] for p in positions]
        drop = tuple(a for a in range(len(masked)) if a not in set(keep))
        table = cond.sum(axis=drop) if drop else cond
        # table axes follow masked order; permute into caller order
        kept_sorted = sorted(keep)
        perm = [kept_sorted.index(a) for a in keep]
        table = np.transpose(table, perm) / mass
        out = {}
        for assignment in itertools.product(range(self.vocab_size), repeat=len(positions)):
            out[assignment] = float(table[assignment])
        return out

    def sequence_probability(self, tokens) -> float:
        return float(self.joint[tuple(int(t) for t in tokens)])


def random_joint(
    rng: np.random.Generator,
    length: int,
    vocab_size: int,
    concentration: float = 1.0,
) -> ExactJointModel:
    """Dirichlet-random joint used by the property and acceptance suites."""
    weights = rng.gamma(concentration, 1.0, size=(vocab_size,) * length)
    weights = np.maximum(weights, 1e-300)
    return ExactJointModel.from_probs(weights / weights.sum())
