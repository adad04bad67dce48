# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled similarity kernels: sorted-set intersection and MinHash mixing.

Must stay bit-identical to scforge.kernels.pure; the test suite compares
both backends on the same inputs.
"""

import numpy as np

from libc.stdint cimport uint64_t


def intersection_size(const uint64_t[::1] a, const uint64_t[::1] b):
    """Size of the intersection of two strictly ascending uint64 arrays."""
    cdef Py_ssize_t i = 0, j = 0
    cdef Py_ssize_t n = 0
    cdef Py_ssize_t la = a.shape[0], lb = b.shape[0]
    while i < la and j < lb:
        if a[i] < b[j]:
            i += 1
        elif a[i] > b[j]:
            j += 1
        else:
            n += 1
            i += 1
            j += 1
    return n


def minhash_from_hashes(const uint64_t[::1] hashes, const uint64_t[::1] keys):
    """Per-key minimum of mix64(element_hash ^ key) over all element hashes."""
    cdef Py_ssize_t n = hashes.shape[0], k = keys.shape[0]
    out = np.empty(k, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef Py_ssize_t i, j
    cdef uint64_t z, m, key
    for j in range(k):
        key = keys[j]
        m = <uint64_t>0xFFFFFFFFFFFFFFFF
        for i in range(n):
            z = hashes[i] ^ key
            z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
            z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
            z = z ^ (z >> 31)
            if z < m:
                m = z
        o[j] = m
    return out
