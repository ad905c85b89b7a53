"""Named random substreams derived from one global seed.

Every consumer of randomness asks for a stream by name ("init",
"lambda", "batch:3", ...). Streams are independent Philox generators
keyed by a hash of the name, so adding a new consumer never perturbs
the draws seen by existing ones.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a fresh generator for (seed, name), deterministic across runs."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]
    ss = np.random.SeedSequence([seed & _MASK64, *words])
    return np.random.Generator(np.random.Philox(ss))
