"""Deterministic seed derivation and categorical sampling.

All randomness in the engine flows from one 64-bit base seed.  Derived
seeds are the first 8 bytes of sha256 over the base seed and a label path,
so splits are stable across platforms, processes and thread schedules.

Sampling follows one documented rule that is part of the wire protocol: a
request with seed s draws position p by inverse CDF at the single uniform
u = unit_uniform(derive_seed(s, "pos", p)).  Any server implementing the
same rule reproduces the engine's draws bit for bit, with no dependence on
a particular generator library.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base: int, *labels) -> int:
    """Derive a 64-bit child seed from a base seed and a label path."""
    h = hashlib.sha256()
    h.update(str(int(base)).encode("ascii"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")


def unit_uniform(seed: int) -> float:
    """The uniform in [0, 1) determined by a seed."""
    return derive_seed(seed, "u") / 2.0**64


def generator(seed: int) -> np.random.Generator:
    """Bulk generator for data synthesis (not used for protocol sampling)."""
    return np.random.Generator(np.random.PCG64(seed))


def sample_categorical(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw of one index at the uniform u."""
    cdf = np.cumsum(probs)
    index = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(index, len(probs) - 1)


def position_sample_seed(request_seed: int, position: int) -> int:
    """Per-position sampling seed; the protocol's documented split rule."""
    return derive_seed(request_seed, "pos", position)
