"""Randomized oracle suite behind ``sscn verify``.

Each check compares an implementation against an independent route to the
same number (a second solver, finite differences, a known invariant) and
reports the measured deviation next to its tolerance.
"""
from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from .dataio import SubspaceSpec, generate_union_of_subspaces
from .edsc import check_subspace_preserving, solve_edsc_closed_form
from .network import Lambdas, SscnModel, sscn_loss
from .numerics import make_rng, random_orthonormal, split_rng, stiefel_violation
from .siamese import analytic_optimum, coefficients, siamese_gradient
from .stiefel import (AxisAlignedSubspaces, CayleyAdamHyper, CayleyAdamState, cayley_adam_step,
                      rotation_loss)

CLOSED_FORM_TOL = 1e-8
ROTATION_TOL = 1e-10
PRESERVE_TOL = 1e-6
GRAD_TOL = 1e-5
MANIFOLD_TOL = 1e-6


def fd_gradient(f, x, eps=1e-6):
    """Central finite differences of scalar ``f`` at array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(g, ref) -> float:
    den = max(np.linalg.norm(ref), np.linalg.norm(g), 1e-300)
    return float(np.linalg.norm(g - ref) / den)


def _check(name, value, tol, **detail):
    return {"name": name, "passed": bool(value <= tol), "value": float(value), "tolerance": tol,
            **detail}


def _random_instance(rng):
    d = int(rng.integers(2, 51))
    n = int(rng.integers(2, 201))
    lam = float(rng.choice([1.0, 10.0, 100.0]))
    return rng.standard_normal((d, n)), lam


def check_closed_form_equivalence(rng, instances=50, inject_fault=False):
    """Q from the closed-form embedding equals the linear-system solution."""
    worst = 0.0
    for _ in range(instances):
        x, lam = _random_instance(rng)
        c = solve_edsc_closed_form(x, lam).c
        lin = analytic_optimum(x, lam, min(x.shape))
        if inject_fault:
            lin.w = lin.w * (1.0 + 1e-3)
        q = coefficients(lin, x)
        worst = max(worst, np.linalg.norm(q - c) / np.linalg.norm(c))
    return _check("closed_form_equivalence", worst, CLOSED_FORM_TOL, instances=instances)


def check_rotation_invariance(rng, rotations=10):
    x = rng.standard_normal((12, 40))
    ref = coefficients(analytic_optimum(x, 10.0, 12), x)
    worst = 0.0
    for _ in range(rotations):
        lin = analytic_optimum(x, 10.0, 15, rotation="random", rng=rng)
        worst = max(worst, float(np.abs(coefficients(lin, x) - ref).max()))
    return _check("rotation_invariance", worst, ROTATION_TOL, rotations=rotations)


def check_subspace_preservation(rng):
    spec = SubspaceSpec(seed=int(rng.integers(2**31)))
    data, _ = generate_union_of_subspaces(spec)
    c = solve_edsc_closed_form(data, 100.0).c
    lin = analytic_optimum(data, 100.0, 6)
    ratio = max(check_subspace_preserving(c, data.labels),
                check_subspace_preserving(coefficients(lin, data), data.labels))
    return _check("subspace_preservation", ratio, PRESERVE_TOL)


def check_siamese_gradient(rng):
    x = rng.standard_normal((6, 9))
    w = rng.standard_normal((4, 6))
    _, g = siamese_gradient(x, w, 3.0)
    fd = fd_gradient(lambda: siamese_gradient(x, w, 3.0)[0], w)
    return _check("gradient_siamese_linear", rel_error(g, fd), GRAD_TOL)


def _autodiff_fd(loss_fn, params):
    loss = loss_fn()
    ad.zero_grad(params)
    ad.backward(loss, params)
    worst = 0.0
    for p in params:
        fd = fd_gradient(lambda: float(loss_fn().value), p.value)
        worst = max(worst, rel_error(p.grad, fd))
    ad.zero_grad(params)
    return worst


def check_autodiff_ops(rng):
    a = ad.Parameter(rng.standard_normal((3, 4)), "a")
    b = ad.Parameter(rng.standard_normal((4, 2)), "b")
    c = ad.Parameter(rng.standard_normal((3, 1)), "c")
    e = ad.Parameter(rng.standard_normal((3, 4)), "e")
    targets = rng.integers(0, 2, 4)
    cases = {
        "matmul": (lambda: ad.sum_squares(a @ b), [a, b]),
        "add_broadcast": (lambda: ad.sum_squares(a + c), [a, c]),
        "sub": (lambda: ad.sum_squares(a - e), [a, e]),
        "mul": (lambda: ad.sum_squares(a * e * 0.7), [a, e]),
        "transpose": (lambda: ad.sum_squares(a.T @ e), [a, e]),
        "tanh": (lambda: ad.sum_squares(ad.tanh(a)), [a]),
        "sigmoid": (lambda: ad.sum_squares(ad.sigmoid(a)), [a]),
        "softmin_cross_entropy": (
            lambda: ad.softmin_cross_entropy(ad.Tensor(np.eye(4)[:, :3]) @ a, targets, 2, 2),
            [a]),
    }
    out = []
    for name, (fn, params) in cases.items():
        out.append(_check(f"gradient_op_{name}", _autodiff_fd(fn, params), GRAD_TOL))
    return out


def check_sscn_loss_gradient(rng):
    """Full four-term loss on a 5-point batch, every parameter."""
    model = SscnModel(6, [5], d_z=4, k=2, q=2, rng=rng,
                      lambdas=Lambdas(self_expr=0.7, recon=1.3, clf=0.5))
    model.rotation.value = random_orthonormal(4, 4, rng)
    x = rng.standard_normal((6, 5))
    targets = rng.integers(0, 2, 5)
    params = model.parameters()
    err = _autodiff_fd(lambda: sscn_loss(model, x, targets)[0], params)
    return _check("gradient_sscn_full_loss", err, GRAD_TOL, n_params=model.n_params(True))


def check_rotation_gradient(rng):
    sub = AxisAlignedSubspaces(3, 2)
    r = random_orthonormal(6, 6, rng)
    h = rng.standard_normal((6, 12))
    t = rng.integers(0, 3, 12)
    _, g = rotation_loss(r, h, t, sub)
    fd = fd_gradient(lambda: rotation_loss(r, h, t, sub)[0], r)
    return _check("gradient_rotation_loss", rel_error(g, fd), GRAD_TOL)


def check_stiefel(rng, steps=1000):
    r = random_orthonormal(8, 8, rng)
    state, hyper = CayleyAdamState(), CayleyAdamHyper(lr=0.05)
    worst = 0.0
    for _ in range(steps):
        r = cayley_adam_step(r, rng.standard_normal((8, 8)), state, hyper)
        worst = max(worst, stiefel_violation(r))
    fixed = cayley_adam_step(r, np.zeros((8, 8)), CayleyAdamState(), hyper)
    return [_check("stiefel_invariant", worst, MANIFOLD_TOL, steps=steps),
            _check("stiefel_zero_gradient_fixed_point", float(np.abs(fixed - r).max()), 0.0)]


def run_suite(seed: int = 0, inject_fault: bool = False) -> dict:
    """Run every check; ``inject_fault`` perturbs the closed-form embedding."""
    t0 = time.perf_counter()
    streams = split_rng(make_rng(seed), 8)
    checks = [check_closed_form_equivalence(streams[0], inject_fault=inject_fault),
              check_rotation_invariance(streams[1]),
              check_subspace_preservation(streams[2]),
              check_siamese_gradient(streams[3]),
              *check_autodiff_ops(streams[4]),
              check_sscn_loss_gradient(streams[5]),
              check_rotation_gradient(streams[6]),
              *check_stiefel(streams[7])]
    failed = [c["name"] for c in checks if not c["passed"]]
    return {"passed": not failed, "failed": failed, "seed": seed, "inject_fault": inject_fault,
            "checks": checks, "seconds": time.perf_counter() - t0}
