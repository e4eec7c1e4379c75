# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled counterparts of ``fblab._purepy``."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint32_t, uint64_t, int64_t
from libc.math cimport INFINITY

cnp.import_array()

cdef uint64_t M0 = 0xD2511F53
cdef uint64_t M1 = 0xCD9E8D57
cdef uint32_t W0 = 0x9E3779B9
cdef uint32_t W1 = 0xBB67AE85


def philox4x32(counters, key0, key1):
    cdef const uint32_t[:, :] c = np.ascontiguousarray(counters, dtype=np.uint32)
    cdef Py_ssize_t n = c.shape[0], i
    out_arr = np.empty((n, 4), dtype=np.uint32)
    cdef uint32_t[:, :] out = out_arr
    cdef uint32_t ka = <uint32_t>(int(key0) & 0xFFFFFFFF)
    cdef uint32_t kb = <uint32_t>(int(key1) & 0xFFFFFFFF)
    cdef uint32_t c0, c1, c2, c3, k0, k1
    cdef uint64_t p0, p1
    cdef int r
    with nogil:
        for i in range(n):
            c0 = c[i, 0]; c1 = c[i, 1]; c2 = c[i, 2]; c3 = c[i, 3]
            k0 = ka; k1 = kb
            for r in range(10):
                p0 = M0 * <uint64_t>c0
                p1 = M1 * <uint64_t>c2
                c0 = <uint32_t>(p1 >> 32) ^ c1 ^ k0
                c1 = <uint32_t>p1
                c2 = <uint32_t>(p0 >> 32) ^ c3 ^ k1
                c3 = <uint32_t>p0
                k0 = k0 + W0
                k1 = k1 + W1
            out[i, 0] = c0; out[i, 1] = c1; out[i, 2] = c2; out[i, 3] = c3
    return out_arr


def viterbi_tailbiting(branch, next_state):
    from fblab._purepy import _predecessors
    cdef const double[:, :, :, :] bm = np.ascontiguousarray(branch, dtype=np.float64)
    ps_arr, pb_arr = _predecessors(next_state)
    cdef const int64_t[:, :] ps = np.ascontiguousarray(ps_arr, dtype=np.int64)
    cdef const int64_t[:, :] pb = np.ascontiguousarray(pb_arr, dtype=np.int64)
    cdef Py_ssize_t n_trials = bm.shape[0], n_steps = bm.shape[1], n_states = bm.shape[2]
    out_arr = np.zeros((n_trials, n_steps), dtype=np.uint8)
    cdef cnp.uint8_t[:, :] out = out_arr
    cdef double[:] metric = np.empty(n_states)
    cdef double[:] nxt = np.empty(n_states)
    cdef cnp.uint8_t[:, :] surv = np.empty((n_steps, n_states), dtype=np.uint8)
    cdef cnp.uint8_t[:, :] best_surv = np.empty((n_steps, n_states), dtype=np.uint8)
    cdef Py_ssize_t t, s0, k, j, state, best_start
    cdef double c0v, c1v, best
    with nogil:
        for t in range(n_trials):
            best = INFINITY
            best_start = 0
            for s0 in range(n_states):
                for j in range(n_states):
                    metric[j] = INFINITY
                metric[s0] = 0.0
                for k in range(n_steps):
                    for j in range(n_states):
                        c0v = metric[ps[j, 0]] + bm[t, k, ps[j, 0], pb[j, 0]]
                        c1v = metric[ps[j, 1]] + bm[t, k, ps[j, 1], pb[j, 1]]
                        if c1v < c0v:
                            nxt[j] = c1v
                            surv[k, j] = 1
                        else:
                            nxt[j] = c0v
                            surv[k, j] = 0
                    for j in range(n_states):
                        metric[j] = nxt[j]
                if metric[s0] < best:
                    best = metric[s0]
                    best_start = s0
                    for k in range(n_steps):
                        for j in range(n_states):
                            best_surv[k, j] = surv[k, j]
            state = best_start
            for k in range(n_steps - 1, -1, -1):
                j = best_surv[k, state]
                out[t, k] = <cnp.uint8_t>pb[state, j]
                state = ps[state, j]
    return out_arr
