"""Named, counter-based random substreams.

Every draw site asks for ``substream(seed, "h", group, scenario, cell)``; the
names are hashed into a Philox key, so streams never overlap and adding a
group or a candidate leaves every other stream unchanged.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, *names) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode())
    for nm in names:
        h.update(b"\x1f")
        h.update(repr(nm).encode())
    return int.from_bytes(h.digest(), "little")


def substream(seed: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *names)))
