"""
Seed derivation and replicate execution shared by the bootstraps and the Monte Carlo harness.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def derive_seeds(seed: int, count: int) -> List[np.random.SeedSequence]:
    """Independent child seeds, one per replicate, fixed by the base seed alone."""
    return np.random.SeedSequence(seed).spawn(count)


def map_replicates(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """
    Apply `fn` to every item, results in item order.

    Args:
        fn: replicate function, must not share mutable state between calls
        items: replicate inputs (typically derived seeds)
        workers: thread count; 1 runs in the calling thread

    Returns:
        List of results aligned with `items`
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug(f"Running {len(items)} replicates on {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
