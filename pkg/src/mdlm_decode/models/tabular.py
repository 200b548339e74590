"""Trainable tabular masked model.

Learns one categorical table per conditioning bucket by stochastic
approximation of the masked log-likelihood objective: for every training
sample a non-empty mask set is drawn uniformly, and each masked cell's
bucket table takes a step toward the observed token.  With the default
step rule lr/(1+n) the table is exactly the running average of one-hot
targets with a unit uniform pseudo-count, so it converges to the
maximum-likelihood conditional while starting from (and never leaving the
neighborhood of) a proper distribution.

Buckets key on the full (position, unmasked pattern+values) context while
that space is small, and fall back to (position, previous token) when it
is not.
"""

from __future__ import annotations

import json

import numpy as np

from ..core import MaskedSequence
from ..errors import ConfigError, EmptyData, LengthMismatch
from ..rng import derive_seed, generator
from .base import QuerySpec, report_from_distribution

CHECKPOINT_VERSION = 1
FULL_PATTERN_CAP = 100_000  # max (pattern, values) contexts per position


def _pattern_space(length: int, vocab_size: int) -> int:
    # contexts per position: every subset of the other cells with values
    return (vocab_size + 1) ** (length - 1)


class TabularMDLM:
    """Categorical tables keyed by masked-position conditioning buckets."""

    def __init__(self, length: int, vocab_size: int, bucketing: str = None, learning_rate: float = 1.0):
        if length < 1 or vocab_size < 2:
            raise ConfigError("need length >= 1 and vocab_size >= 2")
        if bucketing is None:
            bucketing = (
                "full_pattern" if _pattern_space(length, vocab_size) <= FULL_PATTERN_CAP else "prev_token"
            )
        if bucketing not in ("full_pattern", "prev_token"):
            raise ConfigError(f"unknown bucketing {bucketing!r}")
        self._length = length
        self._vocab_size = vocab_size
        self.bucketing = bucketing
        self.learning_rate = float(learning_rate)
        self.step_count = 0
        self.tables: dict = {}  # bucket key -> np.ndarray probs
        self.counts: dict = {}  # bucket key -> updates seen

    @property
    def length(self) -> int:
        return self._length

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    # -- bucketing ---------------------------------------------------------

    def bucket_key(self, position: int, cells) -> tuple:
        if self.bucketing == "full_pattern":
            context = tuple((i, c) for i, c in enumerate(cells) if c is not None and i != position)
            return (position, context)
        prev = cells[position - 1] if position > 0 else None
        return (position, -1 if prev is None else int(prev))

    def table_for(self, key: tuple) -> np.ndarray:
        table = self.tables.get(key)
        if table is None:
            table = np.full(self._vocab_size, 1.0 / self._vocab_size)
        return table

    # -- training ----------------------------------------------------------

    def observe(self, position: int, cells, token: int) -> None:
        """One ascent step for the bucket owning (position | unmasked cells)."""
        key = self.bucket_key(position, cells)
        table = self.table_for(key).copy()
        n = self.counts.get(key, 0) + 1
        step = self.learning_rate / (1.0 + n)
        table += step * (np.eye(1, self._vocab_size, token)[0] - table)
        table /= table.sum()
        self.tables[key] = table
        self.counts[key] = n
        self.step_count += 1

    def masked_loglik(self, sample, mask_set) -> float:
        """Masked log-likelihood of one sample under one mask pattern."""
        cells = [None if i in mask_set else int(t) for i, t in enumerate(sample)]
        total = 0.0
        for position in mask_set:
            table = self.table_for(self.bucket_key(position, cells))
            total += float(np.log(max(table[sample[position]], 1e-300)))
        return total

    # -- model contract ----------------------------------------------------

    def conditionals(self, seq: MaskedSequence, query: QuerySpec = QuerySpec()) -> list:
        if seq.length != self._length:
            raise LengthMismatch(f"canvas length {seq.length} != model length {self._length}")
        reports = []
        for position in seq.masked_positions():
            table = self.table_for(self.bucket_key(position, seq.cells))
            reports.append(report_from_distribution(position, table, query))
        return reports

    # -- persistence -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "length": self._length,
            "vocab_size": self._vocab_size,
            "bucketing": self.bucketing,
            "learning_rate": self.learning_rate,
            "step_count": self.step_count,
            "tables": [
                {"key": _key_to_json(key), "probs": table.tolist(), "count": self.counts[key]}
                for key, table in sorted(self.tables.items(), key=lambda kv: repr(kv[0]))
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TabularMDLM":
        if obj.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {obj.get('version')!r}")
        model = cls(
            length=int(obj["length"]),
            vocab_size=int(obj["vocab_size"]),
            bucketing=obj["bucketing"],
            learning_rate=float(obj["learning_rate"]),
        )
        model.step_count = int(obj["step_count"])
        for entry in obj["tables"]:
            key = _key_from_json(entry["key"], model.bucketing)
            model.tables[key] = np.asarray(entry["probs"], dtype=float)
            model.counts[key] = int(entry["count"])
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path) -> "TabularMDLM":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def _key_to_json(key: tuple):
    position, context = key
    if isinstance(context, tuple):
        return [position, [[i, c] for i, c in context]]
    return [position, context]


def _key_from_json(obj, bucketing: str) -> tuple:
    position, context = obj
    if bucketing == "full_pattern":
        return (int(position), tuple((int(i), int(c)) for i, c in context))
    return (int(position), int(context))


def draw_mask_set(rng: np.random.Generator, length: int) -> frozenset:
    """Uniform draw over the 2^L - 1 non-empty mask sets."""
    pattern = int(rng.integers(1, 2**length))
    return frozenset(i for i in range(length) if pattern >> i & 1)


def train_tabular_mdlm(
    data,
    epochs: int = 1,
    seed: int = 0,
    learning_rate: float = 1.0,
    bucketing: str = None,
) -> TabularMDLM:
    """Fit a TabularMDLM on full sequences by masked-likelihood ascent.

    Per sample and epoch: draw one uniform non-empty mask set, then step
    every masked cell's bucket toward the observed token given the unmasked
    cells.  Zero epochs returns the uniform-initialized model.
    """
    data = [tuple(int(t) for t in sample) for sample in data]
    if not data:
        raise EmptyData("no training samples")
    length = len(data[0])
    if any(len(s) != length for s in data):
        raise LengthMismatch("all training samples must share one length")
    vocab_size = max(max(s) for s in data) + 1
    model = TabularMDLM(length, max(vocab_size, 2), bucketing=bucketing, learning_rate=learning_rate)
    for epoch in range(epochs):
        rng = generator(derive_seed(seed, "epoch", epoch))
        for sample in data:
            mask_set = draw_mask_set(rng, length)
            cells = [None if i in mask_set else t for i, t in enumerate(sample)]
            for position in sorted(mask_set):
                model.observe(position, cells, sample[position])
    return model


def mc_objective(
    model: TabularMDLM,
    data,
    mask_draws: int = 100,
    seed: int = 0,
) -> float:
    """Monte-Carlo estimate of the masked log-likelihood objective.

    Averages the per-sample masked log-likelihood over `mask_draws` uniform
    mask patterns per sample.
    """
    data = [tuple(int(t) for t in sample) for sample in data]
    if not data:
        raise EmptyData("no samples")
    rng = generator(derive_seed(seed, "objective"))
    total = 0.0
    for sample in data:
        for _ in range(mask_draws):
            total += model.masked_loglik(sample, sorted(draw_mask_set(rng, model.length)))
    return total / (len(data) * mask_draws)
