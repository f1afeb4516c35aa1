# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; the numpy twin lives in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


def block_energies(const double[:, ::1] h, Py_ssize_t k, Py_ssize_t q):
    """Squared norm of each point's coordinates inside each axis block, (N, K)."""
    cdef Py_ssize_t dh = h.shape[0], n = h.shape[1], c, i, j
    cdef double v
    out = np.zeros((n, k), dtype=np.float64)
    cdef double[:, ::1] blk = out
    for c in range(dh):
        j = c // q
        for i in range(n):
            v = h[c, i]
            blk[i, j] += v * v
    return out


def projection_distances(const double[:, ::1] h, Py_ssize_t k, Py_ssize_t q):
    cdef Py_ssize_t dh = h.shape[0], n = h.shape[1], i, j
    out = block_energies(h, k, q)
    cdef double[:, ::1] d = out
    cdef double tot
    for i in range(n):
        tot = 0.0
        for j in range(k):
            tot += d[i, j]
        for j in range(k):
            d[i, j] = tot - d[i, j]
    return out


def softmin_xent(const double[:, ::1] h, const long long[::1] targets,
                 Py_ssize_t k, Py_ssize_t q):
    """Summed cross-entropy of softmin memberships, its gradient w.r.t. ``h``,
    and the memberships themselves."""
    cdef Py_ssize_t dh = h.shape[0], n = h.shape[1], c, i, j
    y_arr = block_energies(h, k, q)
    cdef double[:, ::1] y = y_arr
    grad_arr = np.empty((dh, n), dtype=np.float64)
    cdef double[:, ::1] g = grad_arr
    cdef double mx, z, loss = 0.0
    cdef long long t
    for i in range(n):
        mx = -INFINITY
        for j in range(k):
            if y[i, j] > mx:
                mx = y[i, j]
        t = targets[i]
        loss -= y[i, t] - mx
        z = 0.0
        for j in range(k):
            y[i, j] = exp(y[i, j] - mx)
            z += y[i, j]
        loss += log(z)
        for j in range(k):
            y[i, j] /= z
    for c in range(dh):
        j = c // q
        for i in range(n):
            g[c, i] = 2.0 * (y[i, j] - (1.0 if targets[i] == j else 0.0)) * h[c, i]
    return loss, grad_arr, y_arr


def lloyd_assign(const double[:, ::1] points, const double[:, ::1] centers):
    """Nearest center (lowest index on ties) and squared distance per point."""
    cdef Py_ssize_t n = points.shape[0], dim = points.shape[1], m = centers.shape[0]
    cdef Py_ssize_t i, j, c, best
    cdef double dist, bd, diff
    labels_arr = np.empty(n, dtype=np.int64)
    dist_arr = np.empty(n, dtype=np.float64)
    cdef long long[::1] labels = labels_arr
    cdef double[::1] dout = dist_arr
    for i in range(n):
        bd = INFINITY
        best = 0
        for j in range(m):
            dist = 0.0
            for c in range(dim):
                diff = points[i, c] - centers[j, c]
                dist += diff * diff
            if dist < bd:
                bd = dist
                best = j
        labels[i] = best
        dout[i] = bd
    return labels_arr, dist_arr


def hungarian(const double[:, ::1] cost):
    """Min-cost assignment of every row to a distinct column (rows <= cols).

    Shortest augmenting paths with dual potentials, O(n^2 m).
    """
    cdef Py_ssize_t n = cost.shape[0], m = cost.shape[1], i, j, i0, j0, j1
    cdef double delta, cur
    u_arr = np.zeros(n + 1)
    v_arr = np.zeros(m + 1)
    p_arr = np.zeros(m + 1, dtype=np.int64)
    way_arr = np.zeros(m + 1, dtype=np.int64)
    minv_arr = np.empty(m + 1)
    used_arr = np.empty(m + 1, dtype=np.uint8)
    cdef double[::1] u = u_arr, v = v_arr, minv = minv_arr
    cdef long long[::1] p = p_arr, way = way_arr
    cdef unsigned char[::1] used = used_arr
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    out = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] res = out
    for j in range(1, m + 1):
        if p[j] != 0:
            res[p[j] - 1] = j - 1
    return out


def contingency(const long long[::1] a, const long long[::1] b, Py_ssize_t ka, Py_ssize_t kb):
    cdef Py_ssize_t i, n = a.shape[0]
    out = np.zeros((ka, kb), dtype=np.int64)
    cdef long long[:, ::1] t = out
    for i in range(n):
        t[a[i], b[i]] += 1
    return out
