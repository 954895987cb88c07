"""Deterministic random number streams.

Every stochastic component draws from a generator built here, so a run is
reproducible from (seed, stream) alone.  Streams keep independent concerns
(weight init, batch shuffling, self-training shuffling) from perturbing each
other when one of them changes how many draws it makes.
"""
from __future__ import annotations

import numpy as np

# Stream ids.  Fixed constants, never reused for a new purpose.
STREAM_INIT = 0        # weight initialisation
STREAM_TRAIN = 1       # mini-batch shuffling during supervised fitting
STREAM_SELFTRAIN = 2   # mini-batch shuffling during self-training
STREAM_MASK = 3        # entity-mask sampling
STREAM_SYNTH = 4       # synthetic corpus generation
STREAM_PARTITION = 5   # cross-fit fold assignment

_MASK64 = (1 << 64) - 1


def seeded_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for (seed, stream); same pair always gives the same draws."""
    return np.random.default_rng(np.random.SeedSequence([seed & _MASK64, stream & _MASK64]))


def derive_seed(seed: int, *path: int) -> int:
    """Derive a child seed from a root seed and an integer path.

    Used where a sub-computation (e.g. one cross-fit fold) needs its own
    root seed rather than a generator: the child is stable under changes to
    sibling sub-computations.
    """
    ss = np.random.SeedSequence([seed & _MASK64, *(p & _MASK64 for p in path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
