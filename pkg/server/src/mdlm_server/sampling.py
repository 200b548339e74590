"""Deterministic protocol sampling, implemented from the protocol spec.

Position p of a request with seed s is an inverse-CDF draw at the uniform
unit_uniform(derive_seed(s, "pos", p)), where derive_seed hashes the seed
and a label path with sha256 and keeps the first 8 bytes.  Any conforming
client or server reproduces the same tokens from the same distributions.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base: int, *labels) -> int:
    h = hashlib.sha256()
    h.update(str(int(base)).encode("ascii"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")


def unit_uniform(seed: int) -> float:
    return derive_seed(seed, "u") / 2.0**64


def sample_position(probs: np.ndarray, request_seed: int, position: int) -> int:
    u = unit_uniform(derive_seed(request_seed, "pos", position))
    cdf = np.cumsum(probs)
    index = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(index, len(probs) - 1)
