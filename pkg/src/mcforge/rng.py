"""Deterministic seed derivation.

All randomness in the pipeline flows from one master seed through named
sub-streams ("pv", "split", "shuffle", "init", "sample", ...), so each
component is independently reproducible and insensitive to the order in
which other components consume randomness.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *names: str | int) -> int:
    """Derive a 64-bit sub-seed from a master seed and a name path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode("utf-8"))
    for name in names:
        h.update(b"/")
        h.update(str(name).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def generator(master: int, *names: str | int) -> np.random.Generator:
    """A numpy Generator seeded from a named sub-stream."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, *names)))


def unit_hash(master: int, *names: str | int) -> float:
    """A deterministic value in [0, 1) keyed by (master, names)."""
    return derive_seed(master, *names) / 2.0**64
