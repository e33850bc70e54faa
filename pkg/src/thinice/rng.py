"""Seeded random streams.

All randomness comes from :func:`stream`, which keys numpy's Philox-4x64
counter-based generator with a tuple of non-negative integers through
``SeedSequence``. Any (seed, sample index, restart, ...) tuple therefore
names an independent, reproducible stream, so per-sample work gives the
same numbers whether samples run in one batch, in another order, or in
other threads.
"""

import hashlib

import numpy as np

# stream tags, kept distinct so that e.g. shuffling never shares a stream with init
INIT = 1
SHUFFLE = 2
RESTART = 3
SQUARE = 4
DATA = 5
SPLIT = 6


def stream(*keys):
    """Return a ``numpy.random.Generator`` for the integer key tuple."""
    ints = [int(k) for k in keys]
    if any(k < 0 for k in ints):
        raise ValueError(f"stream keys must be non-negative, got {ints}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(ints)))


def derive_seed(*parts):
    """Stable 63-bit seed from arbitrary printable parts (e.g. a grid-cell name)."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1
