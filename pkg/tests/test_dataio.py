import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sscn.container import load_tensors, save_matrix_csv, save_tensors
from sscn.dataio import (BatchSampler, DataMatrix, SubspaceSpec, generate_union_of_subspaces,
                         load_dataset, load_idx, load_mnist_subset, nonlinear_union_of_subspaces,
                         read_idx_images, sample_batch, sample_from_bases, save_dataset, write_idx)
from sscn.errors import DomainError, FormatError
from sscn.numerics import numerical_rank

from conftest import mnist_dir, needs_mnist


# -- DataMatrix -------------------------------------------------------------------

def test_datamatrix_invariants():
    with pytest.raises(DomainError):
        DataMatrix(np.array([[1.0, np.inf]]))
    with pytest.raises(DomainError):
        DataMatrix(np.ones((2, 3)), np.array([0, 1]))
    d = DataMatrix(np.ones((2, 3)), np.array([0, 1, 1]))
    assert (d.d, d.n) == (2, 3)
    with pytest.raises(ValueError):
        d.x[0, 0] = 5.0


# -- synthetic generator -------------------------------------------------------------

def test_single_subspace_points_lie_in_span():
    spec = SubspaceSpec(ambient_dim=5, cluster_dims=[2], points_per_cluster=[10], seed=3)
    data, (b,) = generate_union_of_subspaces(spec)
    resid = data.x - b @ (b.T @ data.x)
    assert np.abs(resid).max() <= 1e-10


def test_independent_rank_identity():
    data, bases = generate_union_of_subspaces(SubspaceSpec())
    assert numerical_rank(data.x) == 6
    full = np.concatenate(bases, axis=1)
    np.testing.assert_allclose(full.T @ full, np.eye(6), atol=1e-12)
    np.testing.assert_array_equal(np.bincount(data.labels), [50, 50, 50])


def test_noise_residual_matches_chi_expectation():
    sigma, d, dim = 0.05, 10, 2
    spec = SubspaceSpec(ambient_dim=d, cluster_dims=[dim], points_per_cluster=[1000],
                        noise_sigma=sigma, seed=11)
    data, (b,) = generate_union_of_subspaces(spec)
    resid = data.x - b @ (b.T @ data.x)
    rms = np.sqrt(np.mean(np.sum(resid ** 2, axis=0)))
    expected = sigma * np.sqrt(d - dim)
    assert abs(rms - expected) <= 0.2 * expected


def test_spec_validation_names_constraint():
    with pytest.raises(DomainError, match="ambient_dim"):
        generate_union_of_subspaces(SubspaceSpec(ambient_dim=5, cluster_dims=[3, 3],
                                                 points_per_cluster=[4, 4]))
    with pytest.raises(DomainError):
        SubspaceSpec(cluster_dims=[0], points_per_cluster=[3]).validate()
    with pytest.raises(DomainError):
        SubspaceSpec(noise_sigma=-1).validate()


def test_generator_seeds_and_fresh_samples():
    a, bases = generate_union_of_subspaces(SubspaceSpec(seed=1))
    b, _ = generate_union_of_subspaces(SubspaceSpec(seed=1))
    c, _ = generate_union_of_subspaces(SubspaceSpec(seed=2))
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()
    fresh = sample_from_bases(bases, [7, 7, 7], 0.0, 99)
    for j, basis in enumerate(bases):
        pts = fresh.x[:, fresh.labels == j]
        assert np.abs(pts - basis @ (basis.T @ pts)).max() <= 1e-10


def test_nonlinear_generator_shapes():
    data, latent = nonlinear_union_of_subspaces(SubspaceSpec(seed=4), out_dim=15)
    assert data.x.shape == (15, 150)
    np.testing.assert_array_equal(data.labels, latent.labels)


# -- IDX ---------------------------------------------------------------------------

def _fixture(tmp_path):
    images = np.zeros((2, 3, 3), dtype=np.uint8)
    images[1] = 255
    labels = np.array([0, 7], dtype=np.uint8)
    ip = write_idx(tmp_path / "img", images)
    lp = write_idx(tmp_path / "lab", labels)
    return ip, lp, images


def test_idx_fixture_round_trip(tmp_path):
    ip, lp, images = _fixture(tmp_path)
    raw = ip.read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x03"
    assert struct.unpack(">3I", raw[4:16]) == (2, 3, 3)
    np.testing.assert_array_equal(read_idx_images(ip), images)
    data = load_idx(ip, lp)
    assert data.x.shape == (9, 2)
    assert set(np.unique(data.x[:, 0])) == {0.0}
    assert set(np.unique(data.x[:, 1])) == {1.0}
    np.testing.assert_array_equal(data.labels, [0, 7])
    assert data.image_shape == (3, 3)


def test_idx_errors_name_file_and_offset(tmp_path):
    ip, lp, _ = _fixture(tmp_path)
    bad = tmp_path / "bad"
    bad.write_bytes(b"\x00\x00\x08\x01" + ip.read_bytes()[4:])
    with pytest.raises(FormatError, match="bad"):
        load_idx(bad, lp)
    trunc = tmp_path / "trunc"
    trunc.write_bytes(ip.read_bytes()[:-3])
    with pytest.raises(FormatError, match="offset"):
        load_idx(trunc, lp)
    three = write_idx(tmp_path / "three", np.array([1, 2, 3], dtype=np.uint8))
    with pytest.raises(FormatError, match="count"):
        load_idx(ip, three)


@needs_mnist
def test_official_mnist_files():
    root = mnist_dir()
    test = load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte")
    assert (test.d, test.n) == (784, 10000)
    assert test.labels.min() == 0 and test.labels.max() == 9
    assert 0.0 <= test.x.min() and test.x.max() <= 1.0
    train_images = read_idx_images(root / "train-images-idx3-ubyte")
    assert train_images.shape == (60000, 28, 28)


@needs_mnist
def test_mnist_subset_remaps_labels():
    sub = load_mnist_subset(mnist_dir(), "test", (0, 1, 2), n=300, seed=0)
    assert sub.n == 300 and set(np.unique(sub.labels)) <= {0, 1, 2}


# -- batches ------------------------------------------------------------------------

def test_full_batch_is_permutation():
    s = BatchSampler(50, 50, 0)
    np.testing.assert_array_equal(np.sort(sample_batch(s)), np.arange(50))


def test_batch_size_checks(caplog):
    with pytest.raises(DomainError):
        BatchSampler(11, 10, 0)
    with caplog.at_level("WARNING"):
        BatchSampler(20, 100, 0, n_clusters=3)
    assert "below 10 points per cluster" in caplog.text


def test_batches_deterministic():
    a, b = BatchSampler(7, 30, 9), BatchSampler(7, 30, 9)
    for _ in range(5):
        np.testing.assert_array_equal(a.sample(), b.sample())


def test_class_counts_within_binomial_band():
    labels = np.repeat(np.arange(10), 1000)
    s = BatchSampler(1000, 10000, 1)
    draws = 300
    ok = 0
    for _ in range(draws):
        counts = np.bincount(labels[s.sample()], minlength=10)
        ok += np.all(np.abs(counts - 100) <= 40)
    assert ok / draws >= 0.99


def test_batch_histogram_uniform():
    n, b, draws = 20, 5, 4000
    s = BatchSampler(b, n, 3)
    hits = np.zeros(n)
    for _ in range(draws):
        idx = s.sample()
        assert len(set(idx.tolist())) == b
        hits[idx] += 1
    p = b / n
    sd = np.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(hits - draws * p) <= 5 * sd)


# -- persistence ---------------------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    spec = SubspaceSpec(seed=5, noise_sigma=0.01)
    data, _ = generate_union_of_subspaces(spec)
    save_dataset(tmp_path / "d.bin", data, spec)
    back, meta = load_dataset(tmp_path / "d.bin")
    np.testing.assert_array_equal(back.x, data.x)
    np.testing.assert_array_equal(back.labels, data.labels)
    assert SubspaceSpec.from_dict(meta["spec"]) == spec
    assert meta["fingerprint"] == data.fingerprint()


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=1, max_size=3),
       st.integers(0, 1000))
def test_container_round_trip_property(tmp_path_factory, shapes, seed):
    rng = np.random.default_rng(seed)
    tensors = {f"t{i}": rng.standard_normal(s) for i, s in enumerate(shapes)}
    tensors["ints"] = rng.integers(-5, 5, 6)
    path = tmp_path_factory.mktemp("c") / "x.bin"
    save_tensors(path, tensors, {"note": "ü"})
    back, meta = load_tensors(path)
    assert meta == {"note": "ü"}
    for k, v in tensors.items():
        np.testing.assert_array_equal(back[k], v)
        assert back[k].dtype == v.dtype


def test_container_rejects_corruption(tmp_path):
    p = save_tensors(tmp_path / "x.bin", {"a": np.ones(3)}, {})
    raw = p.read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(FormatError, match="magic"):
        load_tensors(tmp_path / "magic.bin")
    (tmp_path / "short.bin").write_bytes(raw[:30])
    with pytest.raises(FormatError):
        load_tensors(tmp_path / "short.bin")


def test_matrix_csv(tmp_path):
    p = save_matrix_csv(tmp_path / "m.csv", np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(np.loadtxt(p, delimiter=","), [[1, 2], [3, 4]])
