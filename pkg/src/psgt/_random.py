"""Stable seed derivation shared by every stochastic stage."""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def derive_seed(seed, *keys):
    """Derive a 63-bit child seed from ``seed`` and a path of keys.

    Keys may be ints or strings; strings are hashed with CRC32 so the result
    does not depend on ``PYTHONHASHSEED``.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**128 - 1),
                                spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def generator(seed, *keys):
    return np.random.Generator(np.random.Philox(derive_seed(seed, *keys)))
