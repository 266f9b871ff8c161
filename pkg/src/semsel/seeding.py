"""Deterministic seed derivation.

Every random stream is derived from the experiment's master seed and a path of
tags, e.g. ``derive_seed(master, "ga", run)``. String tags are mapped through
CRC32 so the derivation is stable across processes and platforms.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag(t) -> int:
    if isinstance(t, (int, np.integer)):
        return int(t)
    return zlib.crc32(str(t).encode("utf-8"))


def derive_seed(master: int, *tags) -> int:
    ss = np.random.SeedSequence([int(master), *(_tag(t) for t in tags)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
