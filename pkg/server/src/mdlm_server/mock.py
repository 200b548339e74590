"""Mock backend: exact conditionals from a tabular joint file.

Loads {"length": L, "vocab": V, "logits": [...]} (row-major unnormalized
log-weights; the joint is their softmax) and answers conditional queries by
direct marginalization, independent of any client-side implementation.
"""

from __future__ import annotations

import json

import numpy as np


class MockJointModel:
    def __init__(self, joint: np.ndarray):
        self.joint = joint

    @classmethod
    def load(cls, path) -> "MockJointModel":
        with open(path, "r", encoding="utf-8") as f:
            spec = json.load(f)
        length = int(spec["length"])
        vocab = int(spec["vocab"])
        logits = np.asarray(spec["logits"], dtype=float).reshape((vocab,) * length)
        weights = np.exp(logits - logits.max())
        return cls(weights / weights.sum())

    @property
    def length(self) -> int:
        return self.joint.ndim

    @property
    def vocab_size(self) -> int:
        return self.joint.shape[0]

    def distributions(self, cells) -> dict:
        """Full conditional distribution for every masked (None) cell."""
        if len(cells) != self.length:
            raise ValueError(f"expected {self.length} cells, got {len(cells)}")
        index = []
        for token in cells:
            if token is None:
                index.append(slice(None))
            else:
                token = int(token)
                if not 0 <= token < self.vocab_size:
                    raise ValueError(f"token {token} out of range")
                index.append(token)
        conditioned = self.joint[tuple(index)]
        masked = [i for i, c in enumerate(cells) if c is None]
        total = float(conditioned.sum())
        if total <= 0.0:
            raise ValueError("filled cells have zero probability under the joint")
        out = {}
        for axis, position in enumerate(masked):
            other = tuple(a for a in range(len(masked)) if a != axis)
            out[position] = conditioned.sum(axis=other) / total
        return out
