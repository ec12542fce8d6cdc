"""Deterministic, schedule-independent random streams."""

from __future__ import annotations

import numpy as np


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return an independent random stream addressed by ``(seed, *path)``.

    Streams are backed by a counter-based bit generator keyed on the full
    address, so draws depend only on the address and never on how many draws
    other streams have made. Work items indexed by coalition, subset, or
    repetition can therefore be evaluated in any order, or in parallel,
    without changing results.

    ``seed`` and every path component must be non-negative integers.
    """
    if seed < 0 or any(part < 0 for part in path):
        raise ValueError("stream addresses must be non-negative integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, *path))))
