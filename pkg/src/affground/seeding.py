"""Derived per-task random streams.

Every stochastic choice in the pipeline draws from a generator keyed by the
global seed plus a string tag (usually the instance id), so processing order
and parallelism never change results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *tags: str) -> int:
    """Hash (seed, tags) into an independent 64-bit stream seed."""
    key = ":".join([str(seed), *tags])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derived_rng(seed: int, *tags: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *tags))
