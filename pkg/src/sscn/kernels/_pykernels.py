"""Pure numpy/Python implementations of the compiled kernels.

Same signatures and results as ``_ckernels``; selected automatically when
the extension is not built.
"""
import numpy as np


def block_energies(h, k, q):
    n = h.shape[1]
    return np.square(h).reshape(k, q, n).sum(axis=1).T.copy()


def projection_distances(h, k, q):
    blk = block_energies(h, k, q)
    return blk.sum(axis=1, keepdims=True) - blk


def softmin_xent(h, targets, k, q):
    n = h.shape[1]
    blk = block_energies(h, k, q)
    mx = blk.max(axis=1, keepdims=True)
    e = np.exp(blk - mx)
    z = e.sum(axis=1)
    y = e / z[:, None]
    rows = np.arange(n)
    loss = float(np.sum(np.log(z) - (blk[rows, targets] - mx[:, 0])))
    resid = y.copy()
    resid[rows, targets] -= 1.0
    grad = 2.0 * np.repeat(resid.T, q, axis=0) * h
    return loss, grad, y


def lloyd_assign(points, centers):
    d = (np.sum(points * points, axis=1)[:, None] - 2.0 * points @ centers.T
         + np.sum(centers * centers, axis=1)[None, :])
    labels = np.argmin(d, axis=1)
    # recompute the winning distance exactly to avoid expansion round-off
    diff = points - centers[labels]
    return labels.astype(np.int64), np.sum(diff * diff, axis=1)


def hungarian(cost):
    n, m = cost.shape
    inf = float("inf")
    c = cost.tolist()
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            row = c[i0 - 1]
            ui0 = u[i0]
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
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
    for j in range(1, m + 1):
        if p[j]:
            out[p[j] - 1] = j - 1
    return out


def contingency(a, b, ka, kb):
    out = np.zeros((ka, kb), dtype=np.int64)
    np.add.at(out, (a, b), 1)
    return out
