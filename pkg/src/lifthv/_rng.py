"""Deterministic random-stream derivation.

All stochastic stages derive their generators from one master seed plus a
path of labels, so any stage can be recomputed in isolation and reordering
unrelated stages never changes a stream.
"""

import zlib

import numpy as np

MAX_CODE = 2 ** 32


def _code(part) -> int:
    if isinstance(part, (int, np.integer)):
        value = int(part)
        if not 0 <= value < MAX_CODE:
            raise ValueError(f"path integer out of range: {part}")
        return value
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported path element: {part!r}")


def derive_seed_sequence(master_seed: int, *path) -> np.random.SeedSequence:
    """Derive a child seed sequence for the stream named by ``path``.

    Path elements may be ints (already stream codes) or strings (hashed
    to a stable 32-bit code).
    """
    return np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=tuple(_code(p) for p in path)
    )


def derive_rng(master_seed: int, *path) -> np.random.Generator:
    """Derive an independent generator for the stream named by ``path``."""
    return np.random.default_rng(derive_seed_sequence(master_seed, *path))
