"""Seed handling shared by the library and the CLI."""

from __future__ import annotations

import os

import numpy as np

SEED_ENV = "QUANTPREC_SEED"


def default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


def make_rng(seed=None) -> np.random.Generator:
    """Return a ``Generator``; ``None`` falls back to ``$QUANTPREC_SEED`` (default 0)."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = default_seed()
    return np.random.default_rng(seed)
