# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the speculative sampler and tabulated fields.

Same signatures and results as ``flowcast._kernels_py``.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def mse(const double[::1] a, const double[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef double acc = 0.0, d
    for i in range(n):
        d = a[i] - b[i]
        acc += d * d
    return acc / n


def anchor_mse(const double[::1] anchor, const double[:, ::1] velocities):
    cdef Py_ssize_t i, j, rows = velocities.shape[0], n = anchor.shape[0]
    cdef double acc, d
    out = np.empty(rows, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(rows):
        acc = 0.0
        for j in range(n):
            d = velocities[i, j] - anchor[j]
            acc += d * d
        o[i] = acc / n
    return out


def first_exceeding(const double[::1] errors, double epsilon):
    cdef Py_ssize_t i
    for i in range(errors.shape[0]):
        if errors[i] > epsilon:
            return i
    return -1


def extrapolate(const double[::1] anchor_state, const double[::1] anchor_velocity,
                const double[::1] times, double anchor_time):
    cdef Py_ssize_t i, j, rows = times.shape[0], n = anchor_state.shape[0]
    cdef double dt, prev = anchor_time
    out = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    # accumulate per step so rows match fixed-velocity Euler bit for bit
    for i in range(rows):
        dt = times[i] - prev
        prev = times[i]
        for j in range(n):
            o[i, j] = (anchor_state[j] if i == 0 else o[i - 1, j]) + dt * anchor_velocity[j]
    return out


cdef Py_ssize_t _bracket(const double* ax, Py_ssize_t n, double p) noexcept nogil:
    # last index i with ax[i] <= p, clipped to [0, n-2]
    cdef Py_ssize_t lo = 0, hi = n - 1, mid
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ax[mid] <= p:
            lo = mid
        else:
            hi = mid
    return lo


def multilinear(list axes, values, points):
    cdef const double[:, ::1] pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    cdef Py_ssize_t n_pts = pts.shape[0], ndim = pts.shape[1]
    cdef Py_ssize_t out_dim = values.shape[values.ndim - 1]
    cdef const double[:, ::1] flat = np.ascontiguousarray(values, dtype=np.float64).reshape(-1, out_dim)
    cdef Py_ssize_t[::1] strides = np.ones(ndim, dtype=np.intp)
    cdef Py_ssize_t[::1] lo = np.empty(ndim, dtype=np.intp)
    cdef double[::1] frac = np.empty(ndim, dtype=np.float64)
    # all axes packed into one buffer: axis i is packed[start[i] : start[i] + size[i]]
    cdef const double[::1] packed = np.ascontiguousarray(np.concatenate(axes), dtype=np.float64)
    cdef Py_ssize_t[::1] size = np.array([len(a) for a in axes], dtype=np.intp)
    cdef Py_ssize_t[::1] start = np.concatenate([[0], np.cumsum(size)[:-1]]).astype(np.intp)
    cdef Py_ssize_t i, k, c, corner, offset, n
    cdef double p, w
    cdef const double* ax

    for i in range(ndim - 2, -1, -1):
        strides[i] = strides[i + 1] * values.shape[i + 1]

    out = np.zeros((n_pts, out_dim), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for k in range(n_pts):
            for i in range(ndim):
                ax = &packed[start[i]]
                n = size[i]
                p = pts[k, i]
                if p < ax[0]:
                    p = ax[0]
                elif p > ax[n - 1]:
                    p = ax[n - 1]
                lo[i] = _bracket(ax, n, p)
                frac[i] = (p - ax[lo[i]]) / (ax[lo[i] + 1] - ax[lo[i]])
            for corner in range(1 << ndim):
                w = 1.0
                offset = 0
                for i in range(ndim):
                    if (corner >> i) & 1:
                        w = w * frac[i]
                        offset += (lo[i] + 1) * strides[i]
                    else:
                        w = w * (1.0 - frac[i])
                        offset += lo[i] * strides[i]
                for c in range(out_dim):
                    o[k, c] += w * flat[offset, c]
    return out
