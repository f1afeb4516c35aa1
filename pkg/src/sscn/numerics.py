"""Dense linear algebra and randomness used by every other module.

Conventions
-----------
* Every matrix is a 2-D ``numpy.ndarray`` of dtype ``float64`` in C
  (row-major) order.
* Data sets keep points as **columns**: ``X`` has shape ``(d_X, N)``.
* Random streams are ``numpy.random.Generator`` objects on top of the
  PCG64 bit generator, whose output for a given seed is identical on
  every platform.

The factorizations delegate to LAPACK through numpy/scipy; this module
owns the contracts (rank truncation, conditioning checks, sign fixing)
wrapped around them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import DomainError, NumericalError

DEFAULT_RANK_TOL = 1e-10
SYMMETRY_TOL = 1e-10
MAX_CONDITION = 1e12


def make_rng(seed=None) -> np.random.Generator:
    """Return a PCG64 generator; generators pass through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child streams from ``rng``."""
    return [np.random.Generator(bg) for bg in rng.bit_generator.spawn(n)]


def as_matrix(a, name="matrix") -> np.ndarray:
    """Coerce ``a`` to a finite, non-empty float64 2-D array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DomainError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise DomainError(f"{name} is empty (shape {a.shape})")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} has non-finite entries")
    return a


def _check_symmetric(a, name):
    scale = max(1.0, float(np.max(np.abs(a))))
    if a.shape[0] != a.shape[1] or np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise DomainError(f"{name} is not symmetric")


@dataclass(frozen=True)
class ReducedSvd:
    """Thin SVD ``a = u @ diag(sigma) @ v.T`` truncated to numerical rank."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def r(self) -> int:
        return int(self.sigma.shape[0])

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def reduced_svd(a, rank_tol: float = DEFAULT_RANK_TOL) -> ReducedSvd:
    """Reduced SVD keeping singular values above ``rank_tol * sigma_max``.

    A zero matrix yields rank 0 with empty factors.
    """
    a = as_matrix(a)
    if rank_tol <= 0:
        raise DomainError("rank_tol must be positive")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        r = 0
    else:
        r = int(np.count_nonzero(s > rank_tol * s[0]))
    return ReducedSvd(u=u[:, :r].copy(), sigma=s[:r].copy(), v=vt[:r].T.copy())


def numerical_rank(a, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    return reduced_svd(a, rank_tol).r


def solve_spd(a, b, max_condition: float = MAX_CONDITION) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive-definite ``a`` via Cholesky.

    Raises
    ------
    NumericalError
        If ``a`` is not positive-definite or its estimated 1-norm condition
        number exceeds ``max_condition``.
    """
    a = as_matrix(a, "a")
    b = np.asarray(b, dtype=np.float64)
    _check_symmetric(a, "a")
    if b.shape[0] != a.shape[0]:
        raise DomainError(f"shape mismatch: a is {a.shape}, b is {b.shape}")
    try:
        c, lower = sla.cho_factor(a, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"matrix is not positive-definite: {exc}") from None
    anorm = float(np.max(np.sum(np.abs(a), axis=0)))
    rcond, info = sla.lapack.dpocon(c, anorm, uplo="L" if lower else "U")
    if info != 0 or rcond <= 0 or 1.0 / rcond > max_condition:
        cond = np.inf if rcond <= 0 else 1.0 / rcond
        raise NumericalError(
            f"matrix is ill-conditioned: estimated condition {cond:.3e} > {max_condition:.1e}")
    return sla.cho_solve((c, lower), b, check_finite=False)


def sym_eig(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of symmetric ``a``."""
    a = as_matrix(a)
    _check_symmetric(a, "a")
    a = 0.5 * (a + a.T)
    return np.linalg.eigh(a)


def random_orthonormal(n: int, p: int, rng=None) -> np.ndarray:
    """Draw an ``n x p`` matrix with orthonormal columns, Haar-distributed.

    QR of a standard Gaussian matrix with the signs of ``diag(R)`` folded
    into ``Q`` so the result does not depend on LAPACK sign conventions.
    """
    if p < 1 or n < p:
        raise DomainError(f"need n >= p >= 1, got n={n}, p={p}")
    g = make_rng(rng).standard_normal((n, p))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def stiefel_violation(q) -> float:
    """Frobenius distance of ``q.T @ q`` from the identity."""
    q = np.asarray(q, dtype=np.float64)
    return float(np.linalg.norm(q.T @ q - np.eye(q.shape[1])))
