"""Named random substreams derived from one root seed."""

import zlib

import numpy as np

STREAMS = ("data", "split", "sampler", "augment", "kmeans", "probe", "init", "overlap")


def substream(seed, name, *extra):
    """Independent generator for ``name``; same (seed, name, extra) -> same stream."""
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    key.extend(int(e) & 0xFFFFFFFF for e in extra)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
