# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled regression-tree split scan; same contract as ``_split_py.best_split``."""

from libc.math cimport INFINITY


def best_split(const double[:, ::1] xs, const double[:, ::1] ys, Py_ssize_t min_leaf):
    cdef Py_ssize_t k = xs.shape[0]
    cdef Py_ssize_t n = xs.shape[1]
    cdef Py_ssize_t j, i
    cdef Py_ssize_t best_row = -1, best_pos = -1
    cdef double best = -INFINITY
    cdef double total, s_left, s_right, nl, nr, gain, base
    if n < 2 * min_leaf or n < 2:
        return -1, -1, 0.0
    with nogil:
        for j in range(k):
            total = 0.0
            for i in range(n):
                total = total + ys[j, i]
            base = total * total / n
            s_left = 0.0
            for i in range(n - 1):
                s_left = s_left + ys[j, i]
                if i + 1 < min_leaf:
                    continue
                if n - i - 1 < min_leaf:
                    break
                if not (xs[j, i + 1] > xs[j, i]):
                    continue
                nl = <double>(i + 1)
                nr = <double>(n - i - 1)
                s_right = total - s_left
                gain = s_left * s_left / nl + s_right * s_right / nr - base
                if gain > best:
                    best = gain
                    best_row = j
                    best_pos = i
    if best_row < 0:
        return -1, -1, 0.0
    return best_row, best_pos, best
