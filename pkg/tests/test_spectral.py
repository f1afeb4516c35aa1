import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sscn.dataio import SubspaceSpec, generate_union_of_subspaces
from sscn.edsc import solve_edsc_closed_form
from sscn.errors import DomainError
from sscn.metrics import accuracy, adjusted_rand_index
from sscn.numerics import make_rng
from sscn.siamese import analytic_optimum, coefficients
from sscn.spectral import (ClusterAssignment, DegenerateAffinityWarning, kmeans,
                           normalized_laplacian, pseudo_labels, sparsify_top_m, spectral_cluster)


def _blocks(sizes, rng=None, weight=1.0):
    n = sum(sizes)
    a = np.zeros((n, n))
    start = 0
    for s in sizes:
        block = np.ones((s, s)) if rng is None else rng.uniform(0.5, 1.0, (s, s))
        a[start:start + s, start:start + s] = weight * 0.5 * (block + block.T)
        start += s
    return a, np.repeat(np.arange(len(sizes)), sizes)


def test_two_disconnected_blocks():
    a, truth = _blocks([10, 10])
    res = spectral_cluster(a, 2, rng=0)
    assert adjusted_rand_index(res.labels, truth) == 1.0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(2, 8), min_size=2, max_size=5), st.integers(0, 10**6))
def test_k_components_give_k_zero_eigenvalues_and_exact_split(sizes, seed):
    rng = make_rng(seed)
    a, truth = _blocks(sizes, rng)
    k = len(sizes)
    vals = np.linalg.eigvalsh(normalized_laplacian(a))
    assert np.all(np.abs(vals[:k]) <= 1e-8)
    assert vals[k] > 1e-8
    res = spectral_cluster(a, k, rng=seed)
    assert accuracy(res.labels, truth) == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 25), st.integers(0, 10**6))
def test_laplacian_spectrum_in_unit_interval_times_two(n, seed):
    x = make_rng(seed).uniform(0, 1, (n, n))
    a = x + x.T
    vals = np.linalg.eigvalsh(normalized_laplacian(a))
    assert vals.min() >= -1e-8 and vals.max() <= 2 + 1e-8


def test_isolated_vertex_keeps_laplacian_finite():
    a, _ = _blocks([3, 3])
    a = np.pad(a, ((0, 1), (0, 1)))
    lap = normalized_laplacian(a)
    assert np.all(np.isfinite(lap))
    assert lap[-1, -1] == 1.0


def test_edsc_affinity_recovers_ground_truth():
    data, _ = generate_union_of_subspaces(SubspaceSpec(seed=2))
    res = pseudo_labels(solve_edsc_closed_form(data, 100.0), 3, rng=0)
    assert accuracy(res.labels, data.labels) == 1.0
    assert res.info["eigengap"] > 0


def test_analytic_model_pseudo_labels_are_exact():
    data, _ = generate_union_of_subspaces(SubspaceSpec(seed=5))
    q = coefficients(analytic_optimum(data, 100.0, 6), data)
    assert accuracy(pseudo_labels(q, 3, rng=1).labels, data.labels) == 1.0


def test_full_sparsification_is_a_no_op():
    data, _ = generate_union_of_subspaces(SubspaceSpec(seed=6, noise_sigma=0.05))
    c = solve_edsc_closed_form(data, 100.0)
    dense = pseudo_labels(c, 3, rng=3)
    full = pseudo_labels(c, 3, rng=3, m=data.n)
    np.testing.assert_array_equal(dense.labels, full.labels)


def test_sparsify_keeps_top_entries_and_symmetry(rng):
    x = rng.uniform(0, 1, (8, 8))
    a = x + x.T
    s = sparsify_top_m(a, 3)
    np.testing.assert_array_equal(s, s.T)
    assert np.all((np.count_nonzero(s, axis=1)) >= 3)
    assert np.all(s <= a + 1e-15)


def test_identity_coefficients_warn_but_return_k_groups():
    with pytest.warns(DegenerateAffinityWarning):
        res = pseudo_labels(np.eye(12), 3, rng=0)
    assert res.labels.shape == (12,)
    assert set(res.labels.tolist()) <= {0, 1, 2}


def test_permuting_points_permutes_labels():
    rng = make_rng(9)
    a, truth = _blocks([6, 8, 7], rng, weight=1.0)
    a += 0.01 * np.ones_like(a)
    perm = rng.permutation(a.shape[0])
    base = spectral_cluster(a, 3, rng=4).labels
    moved = spectral_cluster(a[np.ix_(perm, perm)], 3, rng=4).labels
    assert adjusted_rand_index(moved, base[perm]) == 1.0


def test_input_validation():
    with pytest.raises(DomainError):
        spectral_cluster(np.ones((3, 3)), 4)
    with pytest.raises(DomainError):
        spectral_cluster(np.ones((3, 3)), 1)
    with pytest.raises(DomainError):
        spectral_cluster(np.array([[0.0, 1.0], [0.0, 0.0]]), 2)
    with pytest.raises(DomainError):
        spectral_cluster(-np.ones((3, 3)), 2)
    with pytest.raises(DomainError):
        spectral_cluster(np.ones((3, 4)), 2)


def test_kmeans_is_deterministic_and_best_of_restarts(rng):
    pts = np.vstack([rng.normal(c, 0.1, (20, 2)) for c in ([0, 0], [5, 0], [0, 5])])
    l1, in1, _ = kmeans(pts, 3, rng=7)
    l2, in2, _ = kmeans(pts, 3, rng=7)
    np.testing.assert_array_equal(l1, l2)
    assert in1 == in2
    assert accuracy(l1, np.repeat([0, 1, 2], 20)) == 1.0
    _, single, _ = kmeans(pts, 3, rng=7, n_init=1)
    assert in1 <= single + 1e-12


def test_cluster_assignment_flags_empty_clusters():
    ca = ClusterAssignment([0, 0, 2], 4)
    assert ca.sizes.tolist() == [2, 0, 1, 0]
    assert ca.empty_clusters == [1, 3]
