# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: valid-mode cross products and photon deposit.

Contracts mirror twinbeam._kernels_py exactly.
"""

import numpy as np

from libc.math cimport floor

cimport numpy as cnp

cnp.import_array()


def xcorr_cross(object probe_in, object conj_in):
    """out[dy, dx] = sum_w probe[dy:dy+Hc, dx:dx+Wc] * conj."""
    cdef double[:, ::1] probe = np.ascontiguousarray(probe_in, dtype=np.float64)
    cdef double[:, ::1] conj = np.ascontiguousarray(conj_in, dtype=np.float64)
    cdef Py_ssize_t hc = conj.shape[0], wc = conj.shape[1]
    cdef Py_ssize_t ho = probe.shape[0] - hc + 1
    cdef Py_ssize_t wo = probe.shape[1] - wc + 1
    out_arr = np.empty((ho, wo), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t dy, dx, y, x
    cdef double acc
    for dy in range(ho):
        for dx in range(wo):
            acc = 0.0
            for y in range(hc):
                for x in range(wc):
                    acc += probe[dy + y, dx + x] * conj[y, x]
            out[dy, dx] = acc
    return out_arr


def deposit(object xs_in, object ys_in, Py_ssize_t height, Py_ssize_t width):
    """Accumulate photons at continuous (x, y) into pixel counts."""
    cdef double[::1] xs = np.ascontiguousarray(xs_in, dtype=np.float64)
    cdef double[::1] ys = np.ascontiguousarray(ys_in, dtype=np.float64)
    out_arr = np.zeros((height, width), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, ix, iy
    cdef Py_ssize_t n = xs.shape[0]
    for i in range(n):
        ix = <Py_ssize_t>floor(xs[i])
        iy = <Py_ssize_t>floor(ys[i])
        if 0 <= ix < width and 0 <= iy < height:
            out[iy, ix] += 1.0
    return out_arr
