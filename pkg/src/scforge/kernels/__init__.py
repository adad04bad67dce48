"""Similarity kernels with a compiled core and a NumPy fallback.

The compiled extension is preferred when importable; set SCFORGE_PURE=1 to
force the fallback (used by the backend-equivalence tests and benchmarks).
Both backends produce bit-identical outputs.
"""

from __future__ import annotations

import hashlib
import os
from functools import lru_cache
from typing import Iterable

import numpy as np

BACKEND = "python"
if os.environ.get("SCFORGE_PURE"):
    from scforge.kernels import pure as _impl
else:
    try:
        from scforge.kernels import _speedups as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        from scforge.kernels import pure as _impl  # type: ignore[no-redef]

intersection_size = _impl.intersection_size
minhash_from_hashes = _impl.minhash_from_hashes

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


@lru_cache(maxsize=1 << 16)
def hash_lexeme(lexeme: str) -> int:
    """Stable 64-bit hash of a token lexeme (platform independent)."""
    return int.from_bytes(hashlib.blake2b(lexeme.encode("utf-8"), digest_size=8).digest(), "big")


def encode_token_set(lexemes: Iterable[str]) -> np.ndarray:
    """Encode a set of lexemes as a sorted uint64 array for the kernels."""
    hashed = {hash_lexeme(lex) for lex in lexemes}
    arr = np.fromiter(hashed, dtype=np.uint64, count=len(hashed))
    arr.sort()
    return arr


def jaccard_sorted(a: np.ndarray, b: np.ndarray) -> float:
    """Jaccard index of two encoded token sets; 1.0 when both are empty."""
    if a.size == 0 and b.size == 0:
        return 1.0
    inter = intersection_size(a, b)
    return inter / (a.size + b.size - inter)


def _mix64_int(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


def derive_keys(seed: int, n: int) -> np.ndarray:
    """Deterministic per-hash-function keys from a 64-bit seed (splitmix64 stream)."""
    state = seed & _MASK
    keys = np.empty(n, dtype=np.uint64)
    for i in range(n):
        state = (state + _GOLDEN) & _MASK
        keys[i] = _mix64_int(state)
    return keys
