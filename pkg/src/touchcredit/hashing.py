"""Deterministic, platform-independent string hashing.

Python's builtin ``hash`` is salted per process, so everything that must be
reproducible across runs and machines (feature bucketing, user splits) goes
through the 64-bit FNV-1a function below instead.
"""

from __future__ import annotations

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of ``text`` encoded as UTF-8."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def bucket(text: str, n_buckets: int) -> int:
    """Map ``text`` into ``[0, n_buckets)``."""
    return fnv1a64(text) % n_buckets


def unit_interval(text: str) -> float:
    """Map ``text`` to a deterministic point in ``[0, 1)``.

    FNV-1a's high bits disperse poorly on short strings, so the high half is
    folded into the low half and the float is built from the low 53 bits.
    """
    h = fnv1a64(text)
    h ^= h >> 32
    return (h & ((1 << 53) - 1)) / float(1 << 53)
