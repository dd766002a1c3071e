"""Deterministic seed derivation.

All randomness in a run flows from one root seed. Each component pulls its
own stream through ``derive_seed(root, "name", ...)`` so that, e.g., changing
the number of Stage-1 epochs cannot shift the random state seen by Stage 2.
"""

import zlib

import numpy as np

STREAMS = ("data", "stage1", "stage2", "kselect", "cluster")


def derive_seed(root: int, *path) -> int:
    """Derive a child seed from a root seed and a path of names/integers.

    Stable across runs and platforms: names are folded in via crc32, the
    whole path feeds a numpy SeedSequence.
    """
    parts = [int(root) & 0xFFFFFFFF]
    for p in path:
        if isinstance(p, str):
            parts.append(zlib.crc32(p.encode("utf-8")))
        else:
            parts.append(int(p) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(parts).generate_state(1)[0])
