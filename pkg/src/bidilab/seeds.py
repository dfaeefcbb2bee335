"""Named random substreams derived from a single top-level seed.

Every source of randomness in the project (tokenizer sampling, parameter
init, mask draws, data shuffling, ...) pulls its generator from here, so
any component can be re-run in isolation with a reproducible stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *names: str) -> np.random.Generator:
    """Return a generator for the substream identified by `names`.

    The same (seed, names) pair always yields the same stream; distinct
    names yield statistically independent streams.
    """
    keys = [zlib.crc32(n.encode("utf-8")) for n in names]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *keys]))
