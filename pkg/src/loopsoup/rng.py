"""Named random streams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "path_key"]


def path_key(*path: int | str) -> tuple[int, ...]:
    key = []
    for p in path:
        if isinstance(p, str):
            key.append(zlib.crc32(p.encode()))
        else:
            p = int(p)
            if p < 0:
                raise ValueError("stream path components must be nonnegative")
            key.append(p)
    return tuple(key)


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Independent generator for ``(seed, *path)``.

    Streams with different paths are statistically independent; the same
    path always yields the same stream, whatever process asks for it.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=path_key(*path))
    return np.random.Generator(np.random.PCG64(ss))
