"""Small shared helpers: stable hashing, seeded stream derivation, atomic writes."""

from __future__ import annotations

import math
import os
import tempfile

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 encoding of ``text``.

    Chosen as the package-wide stable string hash: published constants,
    platform independent, so hashed features and derived seeds are
    reproducible across runs and machines.
    """
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Derive an independent random stream from a master seed and a key path.

    String keys are folded through :func:`fnv1a64` so callers can label
    streams readably, e.g. ``substream(seed, "split", k)``.
    """
    entropy = [int(seed) & _MASK64]
    for key in keys:
        if isinstance(key, str):
            entropy.append(fnv1a64(key))
        else:
            entropy.append(int(key) & _MASK64)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *keys: int | str) -> int:
    """Fold a master seed and key path into a single reproducible integer seed."""
    return int(substream(seed, *keys).integers(0, 2**63))


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero (for nonnegative x: up)."""
    return int(math.floor(x + 0.5))


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file and rename, never in place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
