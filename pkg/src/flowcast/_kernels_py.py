"""Pure-Python/numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or ``FLOWCAST_BACKEND=python``.
Signatures and results mirror ``_kernels.pyx``.
"""

import numpy as np


def mse(a, b):
    d = a - b
    return float(np.dot(d, d)) / a.shape[0]


def anchor_mse(anchor, velocities):
    """Row-wise MSE of each velocity row against the anchor velocity."""
    d = velocities - anchor[None, :]
    return np.einsum("ij,ij->i", d, d) / anchor.shape[0]


def first_exceeding(errors, epsilon):
    """Index of the first entry ``> epsilon``, or -1."""
    hits = np.flatnonzero(errors > epsilon)
    return int(hits[0]) if hits.size else -1


def extrapolate(anchor_state, anchor_velocity, times, anchor_time):
    """Constant-velocity drafts ``anchor_state + (times[i] - anchor_time) * anchor_velocity``.

    Accumulated one grid step at a time, ``x_i = x_{i-1} + (t_i - t_{i-1}) v``,
    so the rows are bit-identical to Euler steps taken with a fixed velocity.
    """
    times = np.asarray(times, dtype=np.float64)
    out = np.empty((times.size, anchor_state.size))
    x, prev = anchor_state, anchor_time
    for i, t in enumerate(times):
        x = x + (t - prev) * anchor_velocity
        out[i] = x
        prev = t
    return out


def multilinear(axes, values, points):
    """Multilinear interpolation on a rectilinear grid with clamping.

    ``axes`` is a list of strictly increasing node arrays (one per input
    coordinate), ``values`` has shape ``(n_0, ..., n_{D-1}, out)``, ``points``
    has shape ``(P, D)``. Points outside the box are clamped to it.
    """
    points = np.atleast_2d(points)
    n_pts, ndim = points.shape
    out_dim = values.shape[-1]
    flat = values.reshape(-1, out_dim)
    shape = np.array(values.shape[:-1])
    strides = np.ones(ndim, dtype=np.int64)
    for i in range(ndim - 2, -1, -1):
        strides[i] = strides[i + 1] * shape[i + 1]

    lo = np.empty((n_pts, ndim), dtype=np.int64)
    frac = np.empty((n_pts, ndim), dtype=np.float64)
    for i, ax in enumerate(axes):
        p = np.clip(points[:, i], ax[0], ax[-1])
        idx = np.searchsorted(ax, p, side="right") - 1
        idx = np.clip(idx, 0, ax.size - 2)
        lo[:, i] = idx
        frac[:, i] = (p - ax[idx]) / (ax[idx + 1] - ax[idx])

    result = np.zeros((n_pts, out_dim), dtype=np.float64)
    for corner in range(1 << ndim):
        weight = np.ones(n_pts, dtype=np.float64)
        offset = np.zeros(n_pts, dtype=np.int64)
        for i in range(ndim):
            if (corner >> i) & 1:
                weight = weight * frac[:, i]
                offset += (lo[:, i] + 1) * strides[i]
            else:
                weight = weight * (1.0 - frac[:, i])
                offset += lo[:, i] * strides[i]
        result += weight[:, None] * flat[offset]
    return result
