"""Inductive classifier on rotated embeddings.

Embeddings ``H`` are rotated by an orthogonal ``R`` and each point is
assigned to the nearest of ``K`` fixed, axis-aligned ``q``-dimensional
subspaces (coordinate blocks). Soft memberships are the softmin of the
squared projection distances. ``R`` is fitted to pseudo-labels with a
Cayley-transform Adam optimizer that keeps ``R^T R = I``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, NumericalError
from .metrics import hungarian
from .numerics import make_rng, random_orthonormal, stiefel_violation
from .spectral import ClusterAssignment

log = logging.getLogger(__name__)

MANIFOLD_TOL = 1e-6


@dataclass(frozen=True)
class AxisAlignedSubspaces:
    """``K`` coordinate blocks of width ``q``; block ``j`` spans ``[j q, (j+1) q)``."""

    k: int
    q: int

    def __post_init__(self):
        if self.k < 1 or self.q < 1:
            raise DomainError("k and q must be >= 1")

    @property
    def d_h(self) -> int:
        return self.k * self.q

    def basis(self, j: int) -> np.ndarray:
        return np.eye(self.d_h)[:, j * self.q:(j + 1) * self.q]

    def _check(self, h):
        if h.shape[0] != self.d_h:
            raise DomainError(f"embedding dimension {h.shape[0]} != k*q = {self.d_h}")


def projection_distances(h_rot, subspaces: AxisAlignedSubspaces) -> np.ndarray:
    """Squared distance of every column of ``h_rot`` to every block, ``(N, K)``."""
    h_rot = np.asarray(h_rot, dtype=np.float64)
    subspaces._check(h_rot)
    return kernels.projection_distances(h_rot, subspaces.k, subspaces.q)


def softmin_assign(distances) -> np.ndarray:
    """Row-wise ``exp(-d) / sum exp(-d)``, shifted by the row minimum."""
    d = np.asarray(distances, dtype=np.float64)
    e = np.exp(-(d - d.min(axis=1, keepdims=True)))
    return e / e.sum(axis=1, keepdims=True)


def classify(model, rotation, x, subspaces: AxisAlignedSubspaces,
             batch_size: int | None = None) -> ClusterAssignment:
    """Assign points to the nearest rotated block.

    ``model`` is anything with an ``embed(x) -> H`` method. Points are
    processed in chunks of ``batch_size`` columns so memory does not grow
    with N beyond the outputs. Ties go to the lowest block index.
    """
    x = x.x if hasattr(x, "x") else np.asarray(x, dtype=np.float64)
    n = x.shape[1]
    step = n if batch_size is None else batch_size
    labels = np.empty(n, dtype=np.int64)
    soft = np.empty((n, subspaces.k))
    for start in range(0, n, step):
        sl = slice(start, min(start + step, n))
        dist = projection_distances(rotation @ model.embed(x[:, sl]), subspaces)
        labels[sl] = np.argmin(dist, axis=1)
        soft[sl] = softmin_assign(dist)
    return ClusterAssignment(labels, subspaces.k, soft)


# -- Cayley-Adam ------------------------------------------------------------

@dataclass
class CayleyAdamState:
    momentum: np.ndarray | None = None
    v: float = 0.0
    t: int = 0


@dataclass(frozen=True)
class CayleyAdamHyper:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    q: float = 0.5


def _cayley(r, w, alpha):
    n = r.shape[0]
    lhs = np.eye(n) + 0.5 * alpha * w
    rhs = r - 0.5 * alpha * (w @ r)
    return np.linalg.solve(lhs, rhs)


def cayley_adam_step(r, euclidean_grad, state: CayleyAdamState,
                     hyper: CayleyAdamHyper = CayleyAdamHyper()) -> np.ndarray:
    """One Cayley-Adam update of an orthonormal ``r`` (``n x p``, ``n >= p``).

    The momentum is projected to the tangent space as a skew-symmetric
    generator ``W``; the new point solves ``(I + a/2 W) Y = (I - a/2 W) r``
    exactly, so ``Y`` stays orthonormal up to round-off. The step ``a`` is
    capped by ``2 q / ||W||`` and halved (up to 10 times) if the solve fails
    or leaves the manifold. ``state`` is updated in place.
    """
    r = np.asarray(r, dtype=np.float64)
    g = np.asarray(euclidean_grad, dtype=np.float64)
    if stiefel_violation(r) > MANIFOLD_TOL:
        raise DomainError("rotation is not on the Stiefel manifold")
    if state.momentum is None:
        state.momentum = np.zeros_like(r)
    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    state.momentum = b1 * state.momentum + (1.0 - b1) * g
    state.v = b2 * state.v + (1.0 - b2) * float(np.sum(g * g))
    v_hat = state.v / (1.0 - b2 ** state.t)
    scale = (1.0 - b1 ** state.t) * np.sqrt(v_hat + hyper.eps)
    m = state.momentum
    w_hat = m @ r.T - 0.5 * r @ (r.T @ m @ r.T)
    w = (w_hat - w_hat.T) / scale
    state.momentum = scale * (w @ r)
    if not np.any(w):
        return r.copy()
    alpha = min(hyper.lr, 2.0 * hyper.q / (np.linalg.norm(w) + hyper.eps))
    for _ in range(11):
        try:
            y = _cayley(r, w, alpha)
        except np.linalg.LinAlgError:
            y = None
        if y is not None and np.all(np.isfinite(y)) and stiefel_violation(y) <= MANIFOLD_TOL:
            return y
        alpha *= 0.5
    raise NumericalError("Cayley retraction failed after 10 step-size halvings")


class CayleyAdam:
    """Stateful wrapper around :func:`cayley_adam_step`."""

    def __init__(self, **hyper):
        self.hyper = CayleyAdamHyper(**hyper)
        self.state = CayleyAdamState()

    def step(self, r, grad):
        return cayley_adam_step(r, grad, self.state, self.hyper)


# -- rotation training --------------------------------------------------------

def rotation_loss(r, h, targets, subspaces: AxisAlignedSubspaces):
    """Mean cross-entropy of softmin memberships of ``R H`` against block targets,
    and its Euclidean gradient with respect to ``R``."""
    n = h.shape[1]
    loss, g_rot, _ = kernels.softmin_xent(r @ h, targets, subspaces.k, subspaces.q)
    return loss / n, (g_rot @ h.T) / n


def match_blocks(h_rot, labels, subspaces: AxisAlignedSubspaces) -> np.ndarray:
    """Map each class to a block by maximizing total initial soft membership."""
    y = softmin_assign(projection_distances(h_rot, subspaces))
    k = subspaces.k
    conf = np.zeros((k, k))
    for c in range(k):
        members = labels == c
        if members.any():
            conf[c] = y[members].sum(axis=0)
    return hungarian(-conf)


def class_pca_rotation(h, labels, subspaces: AxisAlignedSubspaces) -> np.ndarray:
    """Orthogonal ``R`` whose block ``j`` rows approximately span class ``j``.

    The top-``q`` left singular vectors of each class's embeddings are
    stacked and replaced by the nearest orthogonal matrix (polar factor).
    Classes with fewer than ``q`` directions are padded with zeros before
    the polar step.
    """
    k, q, d = subspaces.k, subspaces.q, subspaces.d_h
    stack = np.zeros((d, d))
    for c in range(k):
        hc = h[:, labels == c]
        if hc.shape[1] == 0:
            continue
        u = np.linalg.svd(hc, full_matrices=False)[0][:, :q]
        stack[c * q:c * q + u.shape[1]] = u.T
    u, _, vt = np.linalg.svd(stack)
    return u @ vt


@dataclass
class RotationResult:
    r: np.ndarray
    class_to_block: np.ndarray
    loss_trace: list = field(default_factory=list)
    train_accuracy: float = 0.0

    def block_labels_to_classes(self, block_labels):
        inv = np.empty_like(self.class_to_block)
        inv[self.class_to_block] = np.arange(self.class_to_block.size)
        return inv[block_labels]


def train_rotation(h, labels, subspaces: AxisAlignedSubspaces, steps: int = 2000,
                   r0="class-pca", rng=None, batch_size: int | None = None, tol: float = 1e-10,
                   **hyper) -> RotationResult:
    """Fit ``R`` so that softmin memberships of ``R H`` reproduce ``labels``.

    ``r0`` is ``"class-pca"`` (see :func:`class_pca_rotation`),
    ``"identity"``, ``"random"`` or an explicit orthogonal matrix. Classes
    are matched to blocks (Hungarian on the memberships at ``r0``), then
    Cayley-Adam minimizes the cross-entropy. The iterate with
    the lowest full-data loss is returned. ``batch_size`` subsamples columns
    per step.
    """
    h = np.asarray(h, dtype=np.float64)
    subspaces._check(h)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (h.shape[1],):
        raise DomainError("one pseudo-label per column of H is required")
    if labels.min() < 0 or labels.max() >= subspaces.k:
        raise DomainError(f"labels must lie in [0, {subspaces.k})")
    missing = sorted(set(range(subspaces.k)) - set(np.unique(labels).tolist()))
    if missing:
        warnings.warn(f"pseudo-label classes {missing} are absent; training on the rest",
                      stacklevel=2)
    rng = make_rng(rng)
    if isinstance(r0, str):
        if r0 == "class-pca":
            r = class_pca_rotation(h, labels, subspaces)
        elif r0 == "identity":
            r = np.eye(subspaces.d_h)
        elif r0 == "random":
            r = random_orthonormal(subspaces.d_h, subspaces.d_h, rng)
        else:
            raise DomainError(f"unknown rotation init {r0!r}")
    else:
        r = np.array(r0, dtype=np.float64)
    mapping = match_blocks(r @ h, labels, subspaces)
    targets = mapping[labels]
    opt = CayleyAdam(**hyper)
    n = h.shape[1]
    best_r, best_loss = r, np.inf
    trace = []
    for it in range(steps):
        loss, grad = rotation_loss(r, h, targets, subspaces)
        trace.append(loss)
        if loss < best_loss:
            best_r, best_loss = r, loss
        if it >= 50 and trace[-51] - loss <= tol * abs(loss):
            break
        if batch_size is not None and batch_size < n:
            idx = rng.choice(n, size=batch_size, replace=False)
            _, grad = rotation_loss(r, h[:, idx], targets[idx], subspaces)
        r = opt.step(r, grad)
    else:
        loss, _ = rotation_loss(r, h, targets, subspaces)
        trace.append(loss)
        if loss < best_loss:
            best_r, best_loss = r, loss
    pred = np.argmin(projection_distances(best_r @ h, subspaces), axis=1)
    acc = float(np.mean(pred == targets))
    log.info("rotation training: %d steps, loss %.4g, accuracy vs pseudo-labels %.4f",
             len(trace), best_loss, acc)
    return RotationResult(best_r, mapping, trace, acc)
