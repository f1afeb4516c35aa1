"""Spectral clustering of self-expression affinities into (pseudo-)labels."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .edsc import CoefficientMatrix, build_affinity
from .errors import DomainError
from .numerics import make_rng, split_rng, sym_eig

DEGREE_FLOOR = 1e-12


class DegenerateAffinityWarning(UserWarning):
    """The affinity carries (almost) no pairwise information."""


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int
    soft: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    @property
    def empty_clusters(self) -> list:
        return [int(j) for j in np.flatnonzero(self.sizes == 0)]


def _kmeans_pp(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    _, d2 = kernels.lloyd_assign(points, centers[:1])
    for j in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers[j] = points[idx]
        _, d2 = kernels.lloyd_assign(points, centers[:j + 1])
    return centers


def _lloyd(points, centers, max_iter, tol):
    labels, d2 = kernels.lloyd_assign(points, centers)
    inertia = d2.sum()
    for _ in range(max_iter):
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                centers[j] = points[members].mean(axis=0)
            else:
                # empty cluster: move it to the worst-served point
                far = int(np.argmax(d2))
                centers[j] = points[far]
                d2[far] = 0.0
        new_labels, d2 = kernels.lloyd_assign(points, centers)
        new_inertia = d2.sum()
        converged = np.array_equal(new_labels, labels) or inertia - new_inertia <= tol * inertia
        labels, inertia = new_labels, new_inertia
        if converged:
            break
    return labels, inertia, centers


def kmeans(points, k: int, rng=None, n_init: int = 20, max_iter: int = 300, tol: float = 1e-9):
    """k-means++ seeded Lloyd iterations; the restart with lowest inertia wins.

    Each restart gets its own child stream of ``rng``, so results do not
    depend on execution order.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if k > points.shape[0]:
        raise DomainError(f"k={k} exceeds the number of points {points.shape[0]}")
    best = None
    for child in split_rng(make_rng(rng), n_init):
        labels, inertia, centers = _lloyd(points, _kmeans_pp(points, k, child), max_iter, tol)
        if best is None or inertia < best[1]:
            best = (labels, inertia, centers)
    return best


def normalized_laplacian(a) -> np.ndarray:
    """``I - D^{-1/2} A D^{-1/2}`` with degrees floored at ``DEGREE_FLOOR``."""
    a = np.asarray(a, dtype=np.float64)
    deg = np.maximum(a.sum(axis=1), DEGREE_FLOOR)
    s = 1.0 / np.sqrt(deg)
    return np.eye(a.shape[0]) - s[:, None] * a * s[None, :]


def spectral_embedding(a, k: int):
    vals, vecs = sym_eig(normalized_laplacian(a))
    emb = vecs[:, :k].copy()
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb /= np.where(norms > 0, norms, 1.0)
    return emb, vals


def spectral_cluster(a, k: int, rng=None, n_init: int = 20, max_iter: int = 300,
                     tol: float = 1e-9) -> ClusterAssignment:
    """Normalized spectral clustering of a symmetric nonnegative affinity.

    Points are embedded into the ``k`` eigenvectors of the smallest
    eigenvalues of the symmetric normalized Laplacian, rows are normalized
    to unit length, and k-means groups the rows.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError("affinity must be square")
    if k < 2:
        raise DomainError("spectral clustering needs k >= 2")
    if k > a.shape[0]:
        raise DomainError(f"k={k} exceeds the number of points {a.shape[0]}")
    if np.any(a < 0) or not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise DomainError("affinity must be symmetric and nonnegative")
    emb, vals = spectral_embedding(a, k)
    labels, inertia, _ = kmeans(emb, k, rng, n_init, max_iter, tol)
    info = {
        "inertia": float(inertia),
        "eigenvalues": vals[:k + 1].tolist(),
        "eigengap": float(vals[k] - vals[k - 1]) if vals.size > k else None,
    }
    return ClusterAssignment(labels, k, info=info)


def sparsify_top_m(a, m: int) -> np.ndarray:
    """Keep the ``m`` largest entries of each row, then symmetrize by averaging."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if m >= n:
        return a.copy()
    keep = np.argpartition(-a, m - 1, axis=1)[:, :m]
    out = np.zeros_like(a)
    rows = np.arange(n)[:, None]
    out[rows, keep] = a[rows, keep]
    return 0.5 * (out + out.T)


def pseudo_labels(q, k: int, rng=None, m: int | None = None, **kw) -> ClusterAssignment:
    """Spectral clustering of ``|Q| + |Q|^T`` with self-loops removed.

    Parameters
    ----------
    q : CoefficientMatrix or ndarray
        Coefficients of the training set.
    k : int
    m : int, optional
        Keep only the ``m`` strongest affinities per row before clustering.
    """
    a = build_affinity(q)
    np.fill_diagonal(a, 0.0)
    if m is not None:
        a = sparsify_top_m(a, m)
    total = np.abs(q.c if isinstance(q, CoefficientMatrix) else q).sum()
    if a.sum() <= 1e-12 * max(total, 1e-300):
        warnings.warn("affinity has no off-diagonal mass; pseudo-labels are arbitrary",
                      DegenerateAffinityWarning, stacklevel=2)
    return spectral_cluster(a, k, rng, **kw)
