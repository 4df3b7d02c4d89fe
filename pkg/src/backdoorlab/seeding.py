"""Seed derivation.

Every random draw in the package is traced to a tuple
``(master_seed, purpose tag, replication index, cell index)``.  The tuple is
fed to :class:`numpy.random.SeedSequence`, whose entropy-mixing hash turns it
into a 64-bit child seed.  Because the child seed depends only on the tuple,
replications and sweep cells can be executed in any order (or in parallel)
without changing a single value.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_code(tag):
    return zlib.crc32(tag.encode("utf-8"))


def derive_seed(master_seed, tag, *indices):
    """Return the 64-bit child seed for ``(master_seed, tag, *indices)``.

    Indices may be negative (``-1`` is used for "not applicable"); they are
    offset into the unsigned range before mixing.
    """
    master = int(master_seed) & _MASK64
    words = [master & 0xFFFFFFFF, master >> 32, _tag_code(tag)]
    for idx in indices:
        v = (int(idx) + (1 << 32)) & _MASK64
        words.extend([v & 0xFFFFFFFF, v >> 32])
    ss = np.random.SeedSequence(words)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed):
    """Generator from an int seed, an existing Generator, or ``None``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng(int(seed) & _MASK64)


def derive_rng(master_seed, tag, *indices):
    return np.random.default_rng(derive_seed(master_seed, tag, *indices))
