"""Seed plumbing shared by data generation and the federation loop."""

import zlib

import numpy as np


def as_generator(rng) -> np.random.Generator:
    """Accept either a Generator or anything default_rng takes as a seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def stream(master_seed: int, tag: str, *fields: int) -> np.random.Generator:
    """Independent generator keyed by (master seed, purpose tag, extra fields).

    Tags keep unrelated draws (init, training, sampling, ...) from sharing a
    stream, so adding draws in one place never shifts another.
    """
    words = [int(master_seed), zlib.crc32(tag.encode("ascii"))]
    words.extend(int(f) for f in fields)
    return np.random.default_rng(np.random.SeedSequence(words))
