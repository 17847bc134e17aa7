"""
vigg | Copyright (c) The vigg developers
"""
import logging

import numpy as np


logger = logging.getLogger("vigg")


def make_rng(seed: "int | np.random.Generator | None" = None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_indices(count: int, limit: int | None, rng: np.random.Generator) -> np.ndarray:
    """
    All of `range(count)` when it fits in `limit`, otherwise a uniform random
    subset of `limit` indices without replacement. Always ascending.
    """
    if limit is None or count <= limit:
        return np.arange(count, dtype=np.int64)
    picked = rng.choice(count, size=limit, replace=False)
    return np.sort(picked).astype(np.int64)


def readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array
