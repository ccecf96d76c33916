"""
Seed derivation.

Every random stream in the pipeline is derived from one top-level seed plus
a tuple of component names, so results do not depend on execution order or
on how work is spread over processes.
"""

import hashlib

import numpy as np


def _name_key(name) -> int:
    digest = hashlib.blake2b(str(name).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed: int, *names) -> int:
    """Return a 63-bit seed for the stream identified by ``names``.

    >>> derive_seed(7, "gbm", 1, "CR") == derive_seed(7, "gbm", 1, "CR")
    True
    """
    ss = np.random.SeedSequence(
        entropy=int(seed) & (2**64 - 1), spawn_key=tuple(_name_key(n) for n in names)
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(seed: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *names)))
