"""Keyed random streams

Every source of randomness is addressed by a tuple of non-negative integers,
so a stream's output depends only on its key and never on the order in which
nodes, rounds or replicates happen to be executed.
"""
import enum

import numpy as np


@enum.unique
class Stream(enum.IntEnum):
    """The purposes a random stream can be drawn for"""

    GRAPH = 1
    SUBSAMPLE = 2
    ALLOCATION = 3
    VALIDATION = 4
    CORRUPTION = 5
    INIT = 6
    TRAIN = 7
    DROPOUT = 8
    CENTRALIZED = 9


def stream(purpose: Stream, *key: int) -> np.random.Generator:
    """A generator seeded by a purpose and an integer key

    Args:
        purpose: What the stream will be used for
        key: The remaining components, e.g. (seed, node, round, epoch)
    """
    return np.random.default_rng(np.random.SeedSequence([int(purpose), *map(int, key)]))
