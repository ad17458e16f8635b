"""Seeded random streams.

Every random draw in the package comes from a ``numpy.random.Generator``
backed by the Philox-4x64 counter-based bit generator.  A stream is fully
determined by ``(seed, stream_id)``: the pair is fed to ``SeedSequence`` as
entropy and spawn key, so streams with different ids never overlap.

Alternate implementations can reproduce the *distributions* (not the bits)
by using any counter-based generator keyed the same way.
"""

import numpy as np

RNG_NAME = "philox4x64-seedsequence"
RNG_VERSION = 1

# stream ids
DESIGN = 0
THETA = 1
DESIGN_NEW = 3
CHAIN = 10
SUBSAMPLE = 11


def make_rng(seed, stream=0):
    """Return a fresh generator for ``(seed, stream)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))
