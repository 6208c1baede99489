# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled greedy selection kernels; contract mirrors _kernels_py."""

from libc.math cimport INFINITY, fabs

import numpy as np

cimport numpy as cnp

cnp.import_array()


def greedy_info_block(double[:, ::1] pair_blk, cnp.int64_t[::1] cands, Py_ssize_t k):
    """Greedy coverage maximization over one class block (see _kernels_py).

    Candidate totals use Neumaier-compensated sums in ascending row order:
    mutually-covering candidate pairs tie exactly under this objective,
    and the lowest-index tie-break only works if equal-in-real-arithmetic
    totals come out equal in floats.
    """
    cdef Py_ssize_t m = pair_blk.shape[0]
    cdef cnp.ndarray sel_arr = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] sel = sel_arr
    cdef cnp.ndarray cm_arr = np.full(m, -INFINITY, dtype=np.float64)
    cdef double[::1] curmax = cm_arr
    cdef list picks = []
    cdef Py_ssize_t step, ci, i
    cdef cnp.int64_t a, best
    cdef double total, comp, t, best_total, v
    for step in range(k):
        best = -1
        best_total = -INFINITY
        for ci in range(cands.shape[0]):
            a = cands[ci]
            if sel[a]:
                continue
            total = 0.0
            comp = 0.0
            for i in range(m):
                # the candidate's own row leaves the sum once selected
                if sel[i] or i == a:
                    continue
                v = pair_blk[i, a]
                if curmax[i] > v:
                    v = curmax[i]
                t = total + v
                if fabs(total) >= fabs(v):
                    comp += (total - t) + v
                else:
                    comp += (v - t) + total
                total = t
            total = total + comp
            if best < 0 or total > best_total:
                best = a
                best_total = total
        if best < 0:
            break
        picks.append(best)
        sel[best] = 1
        for i in range(m):
            if pair_blk[i, best] > curmax[i]:
                curmax[i] = pair_blk[i, best]
    return np.asarray(picks, dtype=np.int64)


def greedy_gain_block(
    double[:, ::1] sim,
    cnp.int64_t[::1] cands,
    Py_ssize_t k,
    unsigned char[::1] selected,
):
    """Greedy similarity-sum maximization; selected updated in place.

    Gains are one compensated ascending-row pass per candidate with the
    sign flipped on selected rows, matching _kernels_py bit for bit so
    exact ties break toward the lowest index in both backends.
    """
    cdef Py_ssize_t m = sim.shape[0]
    cdef list picks = []
    cdef Py_ssize_t step, ci, i
    cdef cnp.int64_t a, best
    cdef double gain, comp, t, x, best_gain
    for step in range(k):
        best = -1
        best_gain = -INFINITY
        for ci in range(cands.shape[0]):
            a = cands[ci]
            if selected[a]:
                continue
            gain = 0.0
            comp = 0.0
            for i in range(m):
                if i == a:
                    continue
                x = sim[a, i] if not selected[i] else -sim[a, i]
                t = gain + x
                if fabs(gain) >= fabs(x):
                    comp += (gain - t) + x
                else:
                    comp += (x - t) + gain
                gain = t
            gain = gain + comp
            if best < 0 or gain > best_gain:
                best = a
                best_gain = gain
        if best < 0:
            break
        picks.append(best)
        selected[best] = 1
    return np.asarray(picks, dtype=np.int64)
