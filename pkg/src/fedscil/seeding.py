"""Deterministic seed derivation.

Every random draw in the simulator comes from a numpy Generator seeded
through this module. A run has one master seed; component seeds are derived
from the master plus a string/int path (for example ``("client", t, r, m)``),
so per-client and per-session streams are independent of iteration order and
stable across platforms. Derivation hashes the canonical repr of the path
with SHA-256, which does not depend on Python's per-process hash salt.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "rng_for"]


def derive_seed(master: int, *path: int | str) -> int:
    """Map (master, path) to a stable 63-bit seed."""
    token = repr((int(master),) + tuple(path)).encode("utf-8")
    digest = hashlib.sha256(token).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(master: int, *path: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *path))
