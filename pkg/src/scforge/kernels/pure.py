"""NumPy fallback for the compiled kernels; bit-identical results."""

from __future__ import annotations

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def intersection_size(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.intersect1d(a, b, assume_unique=True).size)


def minhash_from_hashes(hashes: np.ndarray, keys: np.ndarray) -> np.ndarray:
    mixed = _mix64(hashes[:, None] ^ keys[None, :])
    return mixed.min(axis=0)
