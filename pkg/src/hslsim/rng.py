"""Seeded random streams.

Every random draw in the simulator comes from a child stream of one master
seed. A child stream is identified by a tuple of non-negative integer keys,
conventionally ``(round, stage, node)``, and is built as::

    Generator(PCG64(SeedSequence(entropy=seed, spawn_key=keys)))

so a stream depends only on the seed and its keys, never on how many other
streams were created before it or in which order. Stage tags are the small
integers in :class:`Stage`; node-free streams omit the node key.
"""

from __future__ import annotations

import enum

import numpy as np

__all__ = ["Stage", "stream", "child_seed"]

_MASK64 = (1 << 64) - 1


class Stage(enum.IntEnum):
    PUSH = 1
    GOSSIP = 2
    PULL = 3
    BASELINE = 4
    SGD = 5
    DATA = 6
    INIT = 7
    SPECTRAL = 8
    VERIFY = 9


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0 or seed > _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return the child generator for ``seed`` addressed by ``keys``."""
    spawn_key = tuple(int(k) for k in keys)
    if any(k < 0 for k in spawn_key):
        raise ValueError(f"stream keys must be non-negative, got {spawn_key}")
    seq = np.random.SeedSequence(entropy=_check_seed(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(seq))


def child_seed(seed: int, *keys: int) -> int:
    """Derive a 64-bit integer seed, for handing a sub-experiment its own master seed."""
    seq = np.random.SeedSequence(entropy=_check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
