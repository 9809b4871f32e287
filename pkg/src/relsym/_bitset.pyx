# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled successor generation over fixed-width bitset states.

A state is a ``bytes`` object holding ``words`` little-endian uint64 words.
"""

import numpy as np

from cpython.bytes cimport PyBytes_FromStringAndSize, PyBytes_AS_STRING
from libc.stdint cimport uint64_t
from libc.stdlib cimport malloc, free

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


cdef class BitsetKernel:
    cdef uint64_t[:, ::1] pre
    cdef uint64_t[:, ::1] add
    cdef uint64_t[:, ::1] dele
    cdef uint64_t[::1] goal
    cdef readonly Py_ssize_t n_actions
    cdef readonly Py_ssize_t words
    cdef readonly Py_ssize_t n_atoms

    def __init__(self, pre, add, dele, goal, Py_ssize_t n_atoms):
        self.pre = np.ascontiguousarray(pre, dtype=np.uint64)
        self.add = np.ascontiguousarray(add, dtype=np.uint64)
        self.dele = np.ascontiguousarray(dele, dtype=np.uint64)
        self.goal = np.ascontiguousarray(goal, dtype=np.uint64)
        self.n_actions = self.pre.shape[0]
        self.words = self.goal.shape[0]
        self.n_atoms = n_atoms

    def encode(self, indices):
        buf = np.zeros(self.words, dtype=np.uint64)
        for i in indices:
            buf[i >> 6] |= np.uint64(1) << np.uint64(i & 63)
        return buf.tobytes()

    def decode(self, bytes state):
        cdef const uint64_t* s = <const uint64_t*> PyBytes_AS_STRING(state)
        out = []
        cdef Py_ssize_t w, b
        for w in range(self.words):
            if s[w]:
                for b in range(64):
                    if (s[w] >> b) & 1:
                        out.append(w * 64 + b)
        return out

    def goal_count(self, bytes state):
        cdef const uint64_t* s = <const uint64_t*> PyBytes_AS_STRING(state)
        cdef Py_ssize_t w
        cdef int h = 0
        for w in range(self.words):
            h += __builtin_popcountll(self.goal[w] & ~s[w])
        return h

    def expand(self, bytes state):
        """List of ``(action, successor, unsatisfied goal count)`` for applicable actions."""
        cdef const uint64_t* s = <const uint64_t*> PyBytes_AS_STRING(state)
        cdef Py_ssize_t a, w, W = self.words
        cdef uint64_t* t = <uint64_t*> malloc(W * sizeof(uint64_t))
        cdef bint ok
        cdef int h
        out = []
        try:
            for a in range(self.n_actions):
                ok = True
                for w in range(W):
                    if (s[w] & self.pre[a, w]) != self.pre[a, w]:
                        ok = False
                        break
                if not ok:
                    continue
                h = 0
                for w in range(W):
                    t[w] = (s[w] & ~self.dele[a, w]) | self.add[a, w]
                    h += __builtin_popcountll(self.goal[w] & ~t[w])
                out.append((a, PyBytes_FromStringAndSize(<char*> t, W * 8), h))
        finally:
            free(t)
        return out
