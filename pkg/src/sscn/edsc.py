"""Closed-form dense self-expression and affinity construction.

Minimizes ``0.5*||C||_F^2 + (lam/2)*||X - X C||_F^2`` over all ``N x N``
matrices ``C``. The unique minimizer solves ``(I + lam X^T X) C = lam X^T X``.
This module is the reference every learned model is checked against.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import DataMatrix
from .errors import DomainError, ResourceError
from .numerics import DEFAULT_RANK_TOL, reduced_svd, solve_spd

DENSE_BUDGET = 5000
SOURCES = ("closed_form", "siamese_analytic", "siamese_trained", "sscn")


@dataclass(frozen=True)
class CoefficientMatrix:
    c: np.ndarray
    lam: float
    source: str = "closed_form"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise DomainError(f"unknown coefficient source {self.source!r}")
        c = np.asarray(self.c, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DomainError(f"coefficient matrix must be square, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DomainError("coefficient matrix has non-finite entries")
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.c.shape[0]


def _x(data):
    return data.x if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)


def _check_budget(n, budget):
    if n > budget:
        raise ResourceError(
            f"dense N x N coefficient matrix for N={n} exceeds the budget of {budget} points; "
            "use the siamese model (sscn.siamese) which never forms it")


def solve_edsc_closed_form(data, lam: float, budget: int = DENSE_BUDGET) -> CoefficientMatrix:
    """Solve ``(I + lam G) C = lam G`` with ``G = X^T X`` by Cholesky."""
    x = _x(data)
    if lam <= 0:
        raise DomainError("lambda must be positive")
    n = x.shape[1]
    if n < 2:
        raise DomainError("need at least 2 points")
    _check_budget(n, budget)
    g = lam * (x.T @ x)
    c = solve_spd(np.eye(n) + g, g)
    # exact solution is symmetric; remove round-off asymmetry
    c = 0.5 * (c + c.T)
    return CoefficientMatrix(c, lam, "closed_form")


def solve_edsc_spectral(data, lam: float, rank_tol: float = DEFAULT_RANK_TOL) -> CoefficientMatrix:
    """Same minimizer through the thin SVD: ``V diag(lam s^2 / (1 + lam s^2)) V^T``."""
    x = _x(data)
    if lam <= 0:
        raise DomainError("lambda must be positive")
    svd = reduced_svd(x, rank_tol) if np.any(x) else None
    n = x.shape[1]
    if svd is None or svd.r == 0:
        return CoefficientMatrix(np.zeros((n, n)), lam, "closed_form")
    s2 = svd.sigma ** 2
    w = lam * s2 / (1.0 + lam * s2)
    return CoefficientMatrix((svd.v * w) @ svd.v.T, lam, "closed_form")


def edsc_objective(data, c, lam: float | None = None) -> float:
    """``0.5*||C||_F^2 + (lam/2)*||X - X C||_F^2``."""
    x = _x(data)
    if isinstance(c, CoefficientMatrix):
        lam = c.lam if lam is None else lam
        c = c.c
    if lam is None:
        raise DomainError("lambda required when c is a plain array")
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (x.shape[1], x.shape[1]):
        raise DomainError(f"coefficient shape {c.shape} does not match N={x.shape[1]}")
    resid = x - x @ c
    return 0.5 * float(np.sum(c * c)) + 0.5 * lam * float(np.sum(resid * resid))


def build_affinity(c) -> np.ndarray:
    """Symmetric nonnegative affinity ``|C| + |C|^T``."""
    c = c.c if isinstance(c, CoefficientMatrix) else np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DomainError("affinity needs a square coefficient matrix")
    a = np.abs(c)
    return a + a.T


def check_subspace_preserving(c, labels) -> float:
    """Fraction of absolute coefficient mass linking points with different labels."""
    c = c.c if isinstance(c, CoefficientMatrix) else np.asarray(c, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != (c.shape[0],):
        raise DomainError("labels must cover every column")
    a = np.abs(c)
    total = a.sum()
    if total == 0:
        return 0.0
    off = a[labels[:, None] != labels[None, :]].sum()
    return float(off / total)
