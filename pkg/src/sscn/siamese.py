"""Single-linear-layer siamese self-expression model.

The embedding ``h(X) = W X`` defines coefficients ``Q = H^T H``. The loss
``0.5*||Q||_F^2 + (lam/2)*||X - X Q||_F^2`` has a closed-form global
minimizer

    W* = R diag(sqrt(lam / (1 + lam s_i^2))) U_r^T

for the thin SVD ``X = U_r diag(s) V_r^T`` and any ``R`` with orthonormal
columns. ``Q(W*)`` equals the dense closed-form solution, but the model
only stores ``d_H * d_X`` numbers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import container
from .dataio import DataMatrix
from .errors import ConvergenceError, DomainError
from .numerics import DEFAULT_RANK_TOL, make_rng, random_orthonormal, reduced_svd

log = logging.getLogger(__name__)


@dataclass
class LinearEmbeddingModel:
    w: np.ndarray
    lam: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 2:
            raise DomainError("w must be 2-D")
        if self.lam <= 0:
            raise DomainError("lambda must be positive")

    @property
    def d_h(self) -> int:
        return self.w.shape[0]

    @property
    def d_x(self) -> int:
        return self.w.shape[1]

    @property
    def n_params(self) -> int:
        return self.w.size

    def embed(self, x) -> np.ndarray:
        x = _x(x)
        if x.shape[0] != self.d_x:
            raise DomainError(f"expected {self.d_x}-dimensional points, got {x.shape[0]}")
        return self.w @ x

    def save(self, path, **meta):
        info = dict(self.meta, **meta, lam=self.lam, kind="siamese-linear")
        return container.save_tensors(path, {"w": self.w}, info)

    @classmethod
    def load(cls, path) -> "LinearEmbeddingModel":
        tensors, meta = container.load_tensors(path)
        lam = meta.pop("lam")
        return cls(tensors["w"], lam, meta)


def _x(data):
    return data.x if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)


def _rotation(rotation, d_h, r, rng):
    if isinstance(rotation, str):
        if rotation == "identity":
            return np.eye(d_h)[:, :r]
        if rotation == "random":
            return random_orthonormal(d_h, d_h, rng)[:, :r]
        raise DomainError(f"unknown rotation mode {rotation!r}")
    rot = np.asarray(rotation, dtype=np.float64)
    if rot.shape[0] != d_h or rot.shape[1] < r:
        raise DomainError(f"rotation must be {d_h} x (>= {r}), got {rot.shape}")
    return rot[:, :r]


def analytic_optimum(data, lam: float, d_h: int, rotation="identity", rng=None,
                     rank_tol: float = DEFAULT_RANK_TOL) -> LinearEmbeddingModel:
    """Global minimizer of the siamese loss for a linear embedding.

    Parameters
    ----------
    data : DataMatrix or ndarray, shape (d_X, N)
    lam : float
    d_h : int
        Embedding dimension; must be at least the numerical rank of the data.
    rotation : {"identity", "random"} or ndarray
        ``"identity"`` uses the first ``r`` columns of ``I_{d_H}``;
        ``"random"`` the first ``r`` columns of a random orthogonal matrix.
    """
    x = _x(data)
    if lam <= 0:
        raise DomainError("lambda must be positive")
    svd = reduced_svd(x, rank_tol)
    if d_h < svd.r:
        raise DomainError(f"embedding dimension d_H={d_h} is below the data rank r={svd.r}; "
                          "the global minimum requires d_H >= r")
    scale = np.sqrt(lam / (1.0 + lam * svd.sigma ** 2))
    rot = _rotation(rotation, d_h, svd.r, make_rng(rng))
    w = (rot * scale) @ svd.u.T
    return LinearEmbeddingModel(w, lam, {"source": "siamese_analytic", "rank": svd.r})


def coefficients(model: LinearEmbeddingModel, x_a, x_b=None) -> np.ndarray:
    """Cross-block coefficients ``(W x_a)^T (W x_b)``."""
    h_a = model.embed(x_a)
    h_b = h_a if x_b is None else model.embed(x_b)
    return h_a.T @ h_b


def _loss_terms(x, w, lam):
    h = w @ x
    k = h @ h.T
    resid = x - (x @ h.T) @ h
    return h, k, resid, 0.5 * float(np.sum(k * k)) + 0.5 * lam * float(np.sum(resid * resid))


def siamese_objective(data, model: LinearEmbeddingModel, lam: float | None = None,
                      batch_size: int | None = None) -> float:
    """Siamese loss evaluated without forming the ``N x N`` matrix ``Q``.

    Uses ``||Q||_F = ||H H^T||_F`` and ``X Q = (X H^T) H``. With
    ``batch_size`` the columns are streamed in two passes, so temporary
    memory is ``O(batch_size * d_X)`` instead of ``O(N d_X)``.
    """
    w = model.w if isinstance(model, LinearEmbeddingModel) else np.asarray(model)
    lam = model.lam if lam is None else lam
    x = _x(data)
    if batch_size is None:
        return _loss_terms(x, w, lam)[3]
    n = x.shape[1]
    k = np.zeros((w.shape[0], w.shape[0]))
    g = np.zeros((x.shape[0], w.shape[0]))
    for i in range(0, n, batch_size):
        h = w @ x[:, i:i + batch_size]
        k += h @ h.T
        g += x[:, i:i + batch_size] @ h.T
    sq = 0.0
    for i in range(0, n, batch_size):
        xb = x[:, i:i + batch_size]
        resid = xb - g @ (w @ xb)
        sq += float(np.sum(resid * resid))
    return 0.5 * float(np.sum(k * k)) + 0.5 * lam * sq


def siamese_gradient(data, w, lam: float):
    """Loss and gradient with respect to ``W``; O(N d) memory."""
    x = _x(data)
    w = np.asarray(w, dtype=np.float64)
    h, k, resid, loss = _loss_terms(x, w, lam)
    g_h = 2.0 * (k @ h) - lam * ((h @ resid.T) @ x + (h @ x.T) @ resid)
    return loss, g_h @ x.T


def train_linear(data, d_h: int, lam: float, lr: float | None = None, momentum: float = 0.9,
                 max_iter: int = 20000, tol: float = 1e-13, batch_size: int | None = None,
                 seed=None, init_scale: float = 0.1,
                 snapshot_every: int = 20, precondition: bool = True) -> LinearEmbeddingModel:
    """Fit ``W`` by gradient descent with heavy-ball momentum.

    Full-batch runs stop once the relative loss decrease over 100 steps
    falls below ``tol``; a step that raises the loss is undone and the step
    size halved.

    With ``precondition`` (default) the gradient is multiplied on the right
    by ``P = (lam S^2 + S)^+``, ``S = X X^T``, an approximate inverse of the
    curvature. ``P`` is positive definite on the data span, so stationary
    points are unchanged, but the step no longer slows down like
    ``(sigma_min / sigma_max)^4`` along weak directions. The default step
    is then 0.25 (0.005 for mini-batches, whose rescaled Gram estimates are
    noisy for small batches). Without preconditioning it is
    ``0.25 / (lam s^2 + s)`` (again a quarter of that for mini-batches)
    with ``s`` the squared spectral norm of ``X``. The initial ``W`` has
    entries of size ``init_scale / sqrt(d_X s)``.

    With ``batch_size`` set, training is variance-reduced stochastic
    gradient descent (SVRG). Each step draws three independent uniform
    batches whose rescaled Gram matrices ``(N/b) X_b X_b^T`` fill the three
    slots of the gradient ``S M S - lam S^2 + (lam/2)(S^2 M S + S M S^2)``
    (``M = W^T W``, ``S = X X^T``), which keeps the estimate unbiased.
    Every ``snapshot_every`` steps the exact gradient is rebuilt from ``S``
    (accumulated once over disjoint batches) and used as a control variate.
    Memory stays at O(b d_X + d_X^2).
    """
    x = _x(data)
    d_x, n = x.shape
    rng = make_rng(seed)
    step = batch_size or n
    s_exact = sum(x[:, i:i + step] @ x[:, i:i + step].T for i in range(0, n, step))
    s_max = float(np.linalg.eigvalsh(s_exact)[-1])
    # the optimum has W^T W ~ 1/sigma^2, so start on that scale
    w = init_scale * rng.standard_normal((d_h, d_x)) / np.sqrt(d_x * max(s_max, 1e-300))
    if precondition:
        vals, vecs = np.linalg.eigh(s_exact)
        keep = vals > DEFAULT_RANK_TOL * max(s_max, 1e-300)
        curv = lam * vals[keep] ** 2 + vals[keep]
        precond = (vecs[:, keep] / curv) @ vecs[:, keep].T
        base = 1.0
    else:
        precond = None
        base = 1.0 / (lam * s_max ** 2 + s_max)
    if lr is None:
        if precond is None:
            lr = (0.25 if batch_size is None else 0.0625) * base
        else:
            lr = 0.25 if batch_size is None else 0.005
    trace = []
    if batch_size is None:
        vel = np.zeros_like(w)
        loss, grad = siamese_gradient(x, w, lam)
        trace.append(loss)
        for it in range(max_iter):
            vel = momentum * vel - lr * (grad if precond is None else grad @ precond)
            w_new = w + vel
            new_loss, new_grad = siamese_gradient(x, w_new, lam)
            if not np.isfinite(new_loss) or new_loss > loss:
                lr *= 0.5
                vel[:] = 0.0
                if lr < 1e-30:
                    raise ConvergenceError("step size underflow in train_linear", trace)
                continue
            w, loss, grad = w_new, new_loss, new_grad
            trace.append(loss)
            if len(trace) > 100 and trace[-101] - loss <= tol * abs(loss):
                break
        else:
            raise ConvergenceError(
                f"train_linear did not converge in {max_iter} iterations "
                f"(last loss {trace[-1]:.6e})", trace)
        meta = {"source": "siamese_trained", "iterations": len(trace) - 1}
        return LinearEmbeddingModel(w, lam, meta)

    from .dataio import BatchSampler
    sampler = BatchSampler(batch_size, n, rng)
    scale = n / batch_size

    def gram(idx):
        xb = x[:, idx]
        return xb @ xb.T

    vel = np.zeros_like(w)
    loss = siamese_objective(x, w, lam, batch_size)
    trace.append(loss)
    for it in range(max_iter):
        if it % snapshot_every == 0:
            m_snap = w.T @ w
            g_snap = _gram_gradient(m_snap, s_exact, s_exact, s_exact, lam)
            if it:
                loss = siamese_objective(x, w, lam, batch_size)
                if not np.isfinite(loss):
                    raise ConvergenceError("mini-batch training diverged", trace)
                prev = trace[-1]
                trace.append(loss)
                if abs(prev - loss) <= tol * abs(loss):
                    break
        s1, s2, s3 = (scale * gram(sampler.sample()) for _ in range(3))
        m = w.T @ w
        g = (_gram_gradient(m, s1, s2, s3, lam) - _gram_gradient(m_snap, s1, s2, s3, lam)
             + g_snap)
        step_dir = w @ g if precond is None else (w @ g) @ precond
        vel = momentum * vel - lr * step_dir
        w = w + vel
    else:
        raise ConvergenceError(
            f"mini-batch train_linear did not converge in {max_iter} steps "
            f"(last loss {trace[-1]:.6e})", trace)
    meta = {"source": "siamese_trained", "iterations": it, "batch_size": batch_size}
    return LinearEmbeddingModel(w, lam, meta)


def _gram_gradient(m, s1, s2, s3, lam):
    """Gradient of the loss w.r.t. ``M = W^T W`` with one Gram estimate per slot.

    With independent unbiased estimates ``s1, s2, s3`` of ``X X^T`` the
    result is an unbiased estimate of the full-data gradient.
    """
    s12 = s1 @ s2
    g = s1 @ m @ s2 - lam * s12 + 0.5 * lam * (s12 @ m @ s3 + s3 @ m @ s12)
    return g + g.T
