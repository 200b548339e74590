"""Synthetic desk-scale tasks backed by exact tabular joints.

Three generators with known answers:

* markov-suffix: a short Markov chain whose tail positions all copy the
  chain's last token.  Once the chain is decoded the tail entropies drop to
  exactly zero, so adaptive parallel decoding sweeps the tail in one step
  while fixed one-token decoding pays for every cell.
* grid-constraint: a two-row Latin-style grid (rows are permutations,
  columns must differ) with enough givens for a unique completion; exact
  conditionals collapse onto the solution in any order.
* noisy-copy: a templated instance whose answer block copies one designated
  low-entropy reasoning token while the remaining reasoning cells are
  high-entropy noise, so the answer-uncertainty bound collapses after a
  single fill and early exit skips the noise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Template, Vocab
from .errors import ConfigError
from .models.exact import ExactJointModel
from .rng import derive_seed, generator


@dataclass
class TaskInstance:
    model: ExactJointModel
    vocab: Vocab
    context: tuple
    answer_span: tuple
    gold_answer: tuple
    template: Optional[Template] = None
    givens: dict = field(default_factory=dict)


def greedy_chain_completion(model: ExactJointModel, givens: dict = None) -> list:
    """Left-to-right argmax completion by exact marginalization.

    Serves as the canonical answer definition for tasks that lack a forced
    answer; it is policy-independent and brute-force computable.
    """
    cells = [None] * model.length
    for position, token in (givens or {}).items():
        cells[position] = int(token)
    joint = model.joint
    for position in range(model.length):
        if cells[position] is not None:
            continue
        index = tuple(slice(None) if c is None else c for c in cells)
        cond = joint[index]
        masked = [i for i, c in enumerate(cells) if c is None]
        axis = masked.index(position)
        other = tuple(a for a in range(len(masked)) if a != axis)
        marginal = cond.sum(axis=other)
        cells[position] = int(np.argmax(marginal))
    return cells


class MarkovSuffixTask:
    """Markov chain of `chain_length` binary tokens; `suffix_length` tail
    cells all equal the last chain token."""

    name = "markov-suffix"

    def __init__(self, chain_length: int = 4, suffix_length: int = 4):
        if chain_length < 2 or suffix_length < 1:
            raise ConfigError("need chain_length >= 2 and suffix_length >= 1")
        self.chain_length = chain_length
        self.suffix_length = suffix_length
        self.length = chain_length + suffix_length
        if self.length > 8:
            raise ConfigError("exact joints support at most 8 positions")
        # values {0,1}; pad=2, eos=3 never appear in the joint
        self.vocab = Vocab(size=4, eos_id=3, mask_id=4, pad_id=2)

    def answer_span(self) -> tuple:
        return (self.chain_length, self.length)

    def instance(self, seed: int) -> TaskInstance:
        rng = generator(seed)
        start = rng.uniform(0.3, 0.7)
        transition = rng.uniform(0.3, 0.7, size=2)
        joint = np.zeros((self.vocab.size,) * self.length)
        for chain in itertools.product((0, 1), repeat=self.chain_length):
            prob = start if chain[0] == 0 else 1.0 - start
            for prev, cur in zip(chain, chain[1:]):
                p_zero = transition[prev]
                prob *= p_zero if cur == 0 else 1.0 - p_zero
            index = chain + (chain[-1],) * self.suffix_length
            joint[index] = prob
        model = ExactJointModel.from_probs(joint)
        completion = greedy_chain_completion(model)
        lo, hi = self.answer_span()
        return TaskInstance(
            model=model,
            vocab=self.vocab,
            context=(),
            answer_span=self.answer_span(),
            gold_answer=tuple(completion[lo:hi]),
        )

    def instances(self, n: int, seed: int):
        for index in range(n):
            yield self.instance(derive_seed(seed, self.name, "instance", index))


class GridConstraintTask:
    """2 x width Latin-style grid: each row is a permutation of 0..width-1
    and the two cells of every column differ.  Givens pin a unique
    completion; the second row is the answer."""

    name = "grid-constraint"

    def __init__(self, width: int = 3):
        if not 2 <= width <= 4:
            raise ConfigError("grid width must be 2..4")
        self.width = width
        self.length = 2 * width
        size = width + 2  # values 0..width-1, then eos, pad
        self.vocab = Vocab(size=size, eos_id=width, mask_id=size, pad_id=width + 1)
        self._grids = self._valid_grids()
        weight = np.zeros((size,) * self.length)
        for grid in self._grids:
            weight[grid] = 1.0
        self._joint = weight / weight.sum()

    def _valid_grids(self) -> list:
        grids = []
        for top in itertools.permutations(range(self.width)):
            for bottom in itertools.permutations(range(self.width)):
                if all(t != b for t, b in zip(top, bottom)):
                    grids.append(tuple(top) + tuple(bottom))
        return grids

    def answer_span(self) -> tuple:
        return (self.width, self.length)

    def instance(self, seed: int) -> TaskInstance:
        rng = generator(seed)
        solution = self._grids[int(rng.integers(len(self._grids)))]
        order = list(rng.permutation(self.length))
        givens = {}
        candidates = list(self._grids)
        for position in order:
            if len(candidates) == 1:
                break
            givens[int(position)] = solution[position]
            candidates = [g for g in candidates if g[position] == solution[position]]
        model = ExactJointModel.from_probs(self._joint)
        lo, hi = self.answer_span()
        return TaskInstance(
            model=model,
            vocab=self.vocab,
            context=(),
            answer_span=self.answer_span(),
            gold_answer=tuple(solution[lo:hi]),
            givens=givens,
        )

    def instances(self, n: int, seed: int):
        for index in range(n):
            yield self.instance(derive_seed(seed, self.name, "instance", index))


class NoisyCopyTask:
    """Templated copy task: one low-entropy source token, noisy filler
    reasoning cells (with a little pad mass so early-exit padding stays in
    support), a one-token delimiter, and an answer block that copies the
    source exactly."""

    name = "noisy-copy"

    DELIMITER_TOKEN = 2

    def __init__(self, noise_cells: int = 3, answer_cells: int = 2):
        if noise_cells < 1 or answer_cells < 1:
            raise ConfigError("need noise_cells >= 1 and answer_cells >= 1")
        self.noise_cells = noise_cells
        self.answer_cells = answer_cells
        self.length = 1 + noise_cells + 1 + answer_cells
        if self.length > 8:
            raise ConfigError("exact joints support at most 8 positions")
        # values: source/answer in {0,1}; noise in 0..3; pad=4, eos=5
        self.vocab = Vocab(size=6, eos_id=5, mask_id=6, pad_id=4)

    def template(self) -> Template:
        reasoning = (0, 1 + self.noise_cells)
        answer = (reasoning[1] + 1, self.length)
        return Template(
            reasoning_span=reasoning,
            delimiter_tokens=(self.DELIMITER_TOKEN,),
            answer_span=answer,
        )

    def instance(self, seed: int) -> TaskInstance:
        rng = generator(seed)
        likely = int(rng.integers(2))
        bias = rng.uniform(0.6, 0.9)
        source = np.zeros(self.vocab.size)
        source[likely] = bias
        source[1 - likely] = 1.0 - bias

        noise_dists = []
        for _ in range(self.noise_cells):
            noise = np.zeros(self.vocab.size)
            noise[:4] = rng.dirichlet(np.full(4, 5.0)) * 0.92
            noise[self.vocab.pad_id] = 0.08  # early-exit pads must stay in support
            noise_dists.append(noise)

        joint = np.zeros((self.vocab.size,) * self.length)
        answer_lo = 1 + self.noise_cells + 1
        noise_support = (0, 1, 2, 3, self.vocab.pad_id)
        for src in (0, 1):
            base = source[src]
            if base == 0.0:
                continue
            for noise in itertools.product(noise_support, repeat=self.noise_cells):
                prob = base
                for cell, token in enumerate(noise):
                    prob *= noise_dists[cell][token]
                index = (src,) + noise + (self.DELIMITER_TOKEN,) + (src,) * self.answer_cells
                joint[index] += prob
        model = ExactJointModel.from_probs(joint)
        return TaskInstance(
            model=model,
            vocab=self.vocab,
            context=(),
            answer_span=(answer_lo, self.length),
            gold_answer=(likely,) * self.answer_cells,
            template=self.template(),
        )

    def instances(self, n: int, seed: int):
        for index in range(n):
            yield self.instance(derive_seed(seed, self.name, "instance", index))


TASKS = {
    MarkovSuffixTask.name: MarkovSuffixTask,
    GridConstraintTask.name: GridConstraintTask,
    NoisyCopyTask.name: NoisyCopyTask,
}


def make_task(name: str, **kwargs):
    if name not in TASKS:
        raise ConfigError(f"unknown task {name!r}; available: {sorted(TASKS)}")
    return TASKS[name](**kwargs)
