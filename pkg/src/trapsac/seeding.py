"""Named, order-independent random streams derived from one integer seed."""

import zlib

import numpy as np


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str) -> np.random.Generator:
    """Counter-based generator for component ``name``.

    Streams for different names never share state, so adding or reordering
    components does not shift anybody else's draws.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(_key(name),))
    return np.random.Generator(np.random.Philox(ss))


def episode_seed(seed: int, name: str, episode: int) -> int:
    """Scenario seed for episode ``episode`` of the stream ``name``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_key(name), int(episode)))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
