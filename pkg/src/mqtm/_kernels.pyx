# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled state-vector kernels. Mirrors :mod:`mqtm._fallback` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def apply_local(const double complex[::1] state, int num_qubits,
                const double complex[:, ::1] op, positions):
    """Return ``op`` (acting on ``positions``, in that factor order) applied to ``state``."""
    cdef int k = len(positions)
    cdef int sub = 1 << k
    cdef Py_ssize_t dim = state.shape[0]
    cdef Py_ssize_t[8] masks
    cdef Py_ssize_t[256] offsets
    cdef double complex[256] buf
    cdef Py_ssize_t all_mask = 0
    cdef Py_ssize_t base, off
    cdef int a, b, t
    cdef double complex acc
    if k > 8:
        raise ValueError("at most 8 local qubits")
    if op.shape[0] != sub or op.shape[1] != sub:
        raise ValueError("operator shape does not match positions")
    for t in range(k):
        masks[t] = (<Py_ssize_t> 1) << (num_qubits - 1 - <int> positions[t])
        all_mask |= masks[t]
    for a in range(sub):
        off = 0
        for t in range(k):
            if (a >> (k - 1 - t)) & 1:
                off |= masks[t]
        offsets[a] = off
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(dim, dtype=np.complex128)
    cdef const double complex[:, ::1] m = op
    cdef const double complex[::1] src = state
    cdef double complex[::1] dst = out
    for base in range(dim):
        if base & all_mask:
            continue
        for a in range(sub):
            buf[a] = src[base | offsets[a]]
        for a in range(sub):
            acc = 0
            for b in range(sub):
                acc = acc + m[a, b] * buf[b]
            dst[base | offsets[a]] = acc
    return out


def norm_sq(const double complex[::1] state):
    cdef double total = 0.0
    cdef Py_ssize_t i
    cdef const double complex[::1] s = state
    for i in range(s.shape[0]):
        total += s[i].real * s[i].real + s[i].imag * s[i].imag
    return total
