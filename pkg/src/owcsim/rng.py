"""Deterministic random sub-streams.

Every stream is keyed by ``(master seed, module name, slot, index)``. The
module name is folded in through CRC32 so adding a new module never shifts
the streams of existing ones.
"""
import zlib

import numpy as np


def _tag(name):
    return zlib.crc32(name.encode("utf-8")) & 0xFFFFFFFF


def stream(master, module, slot=0, index=0):
    """Return an independent ``numpy.random.Generator`` for the given key."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFF, _tag(module), int(slot), int(index)])
    return np.random.Generator(np.random.PCG64(ss))
