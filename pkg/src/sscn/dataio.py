"""Data containers, synthetic union-of-subspaces data, MNIST IDX files and
uniform mini-batch sampling."""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import container
from .errors import DomainError, FormatError
from .numerics import make_rng, random_orthonormal

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class DataMatrix:
    """Points stored as columns of ``x`` (shape ``(d_X, N)``).

    ``x`` and ``labels`` are made read-only on construction.
    """

    x: np.ndarray
    labels: np.ndarray | None = None
    image_shape: tuple | None = None

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64, order="C")
        if x.ndim != 2 or x.size == 0:
            raise DomainError(f"data matrix must be non-empty 2-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainError("data matrix has non-finite entries")
        x.flags.writeable = False
        object.__setattr__(self, "x", x)
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64)
            if labels.shape != (x.shape[1],):
                raise DomainError(
                    f"label count {labels.size} does not match point count {x.shape[1]}")
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)

    @property
    def d(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def take(self, idx) -> "DataMatrix":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return DataMatrix(self.x[:, idx], labels, self.image_shape)

    def fingerprint(self) -> str:
        """SHA-256 over shape, entries and labels."""
        h = hashlib.sha256()
        h.update(struct.pack("<QQ", *self.x.shape))
        h.update(self.x.astype("<f8").tobytes())
        if self.labels is not None:
            h.update(self.labels.astype("<i8").tobytes())
        return h.hexdigest()


@dataclass
class SubspaceSpec:
    """Parameters of a synthetic union of independent linear subspaces."""

    ambient_dim: int = 10
    cluster_dims: list = field(default_factory=lambda: [2, 2, 2])
    points_per_cluster: list = field(default_factory=lambda: [50, 50, 50])
    noise_sigma: float = 0.0
    seed: int = 0

    def validate(self):
        k = len(self.cluster_dims)
        if k < 1 or len(self.points_per_cluster) != k:
            raise DomainError("cluster_dims and points_per_cluster must have equal, nonzero length")
        if min(self.cluster_dims) < 1 or min(self.points_per_cluster) < 1:
            raise DomainError("cluster dimensions and point counts must be >= 1")
        if sum(self.cluster_dims) > self.ambient_dim:
            raise DomainError(
                f"sum(cluster_dims) = {sum(self.cluster_dims)} exceeds ambient_dim = "
                f"{self.ambient_dim}; independent subspaces are impossible")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be >= 0")

    @property
    def k(self) -> int:
        return len(self.cluster_dims)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cluster_dims"] = [int(v) for v in d["cluster_dims"]]
        d["points_per_cluster"] = [int(v) for v in d["points_per_cluster"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SubspaceSpec":
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise DomainError(f"unknown synthetic spec key(s): {', '.join(unknown)}")
        return cls(**d)


def generate_union_of_subspaces(spec: SubspaceSpec, rng=None):
    """Sample points from ``spec.k`` independent subspaces.

    One ``d_X x sum(dims)`` orthonormal matrix is drawn and its columns are
    split into the per-cluster bases, so the subspaces are independent by
    construction. In-subspace coefficients are standard Gaussian; noise is
    isotropic Gaussian with scale ``noise_sigma``.

    Parameters
    ----------
    spec : SubspaceSpec
    rng : Generator, optional
        Overrides ``spec.seed``. Used to draw fresh points from the same
        subspaces via :func:`sample_from_bases`.

    Returns
    -------
    data : DataMatrix
    bases : list of ndarray
        Orthonormal basis of each cluster, shape ``(d_X, dim_i)``.
    """
    spec.validate()
    rng = make_rng(spec.seed if rng is None else rng)
    full = random_orthonormal(spec.ambient_dim, sum(spec.cluster_dims), rng)
    bounds = np.cumsum([0] + list(spec.cluster_dims))
    bases = [full[:, a:b].copy() for a, b in zip(bounds[:-1], bounds[1:])]
    data = sample_from_bases(bases, spec.points_per_cluster, spec.noise_sigma, rng)
    return data, bases


def sample_from_bases(bases, points_per_cluster, noise_sigma, rng) -> DataMatrix:
    rng = make_rng(rng)
    blocks, labels = [], []
    for j, (basis, n) in enumerate(zip(bases, points_per_cluster)):
        g = rng.standard_normal((basis.shape[1], n))
        blocks.append(basis @ g)
        labels.append(np.full(n, j, dtype=np.int64))
    x = np.concatenate(blocks, axis=1)
    if noise_sigma > 0:
        x = x + noise_sigma * rng.standard_normal(x.shape)
    return DataMatrix(x, np.concatenate(labels))


def nonlinear_union_of_subspaces(spec: SubspaceSpec, out_dim: int, hidden: int = 32,
                                 gain: float = 0.5, rng=None):
    """Union of subspaces pushed through a fixed random one-hidden-layer map.

    ``x = B tanh(gain * A u) / gain`` where ``u`` is a linear
    union-of-subspaces sample. Small ``gain`` keeps the map close to
    linear. Returns the data and the latent linear sample.
    """
    rng = make_rng(spec.seed if rng is None else rng)
    latent, _ = generate_union_of_subspaces(spec, rng)
    a = rng.standard_normal((hidden, spec.ambient_dim)) / np.sqrt(spec.ambient_dim)
    b = rng.standard_normal((out_dim, hidden)) / np.sqrt(hidden)
    x = b @ np.tanh(gain * (a @ latent.x)) / gain
    return DataMatrix(x, latent.labels), latent


# -- IDX ---------------------------------------------------------------------

def _read_idx(path, magic, what):
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < 4:
        raise FormatError(f"{path}: truncated header at offset 0")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad {what} magic 0x{got:08x} at offset 0 "
                          f"(expected 0x{magic:08x})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise FormatError(f"{path}: truncated dimension header at offset 4")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    expected = int(np.prod(dims))
    if len(buf) - header < expected:
        raise FormatError(f"{path}: truncated payload at offset {len(buf)}, "
                          f"expected {expected} bytes after offset {header}")
    if len(buf) - header > expected:
        raise FormatError(f"{path}: {len(buf) - header - expected} unexpected trailing bytes "
                          f"at offset {header + expected}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Raw ``(count, rows, cols)`` uint8 images."""
    return _read_idx(path, IDX_IMAGES_MAGIC, "image")


def read_idx_labels(path) -> np.ndarray:
    return _read_idx(path, IDX_LABELS_MAGIC, "label")


def load_idx(images_path, labels_path, scale: bool = True) -> DataMatrix:
    """Load an IDX image/label pair as a ``784 x N`` data matrix.

    Pixels are divided by 255 when ``scale`` is set. The 28x28 image shape is
    kept in ``image_shape``.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{labels_path}: label count {labels.shape[0]} at offset 4 does not match "
            f"image count {images.shape[0]} in {images_path}")
    x = images.reshape(images.shape[0], -1).T.astype(np.float64)
    if scale:
        x /= 255.0
    return DataMatrix(x, labels.astype(np.int64), tuple(images.shape[1:]))


def write_idx(path, array, magic=None):
    """Write a uint8 array in IDX layout (inverse of the readers above)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    if magic is None:
        magic = 0x00000800 | arr.ndim
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())
    return path


MNIST_FILES = {
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
}


def load_mnist_subset(root, split="test", digits=(0, 1, 2), n=None, seed=0,
                      exclude=None, scale: bool = True) -> DataMatrix:
    """Load a class subset of MNIST, optionally a seeded random sample of size ``n``.

    Labels are remapped to ``0..len(digits)-1`` in the order given.
    """
    images, labels = MNIST_FILES[split]
    root = Path(root)
    data = load_idx(root / images, root / labels, scale=scale)
    mask = np.isin(data.labels, digits)
    idx = np.flatnonzero(mask)
    if exclude is not None:
        idx = np.setdiff1d(idx, exclude)
    if n is not None:
        if n > idx.size:
            raise DomainError(f"requested {n} images but only {idx.size} available")
        idx = np.sort(make_rng(seed).choice(idx, size=n, replace=False))
    remap = {d: i for i, d in enumerate(digits)}
    sub = data.take(idx)
    return DataMatrix(sub.x, np.array([remap[int(v)] for v in sub.labels]), data.image_shape)


# -- persistence ---------------------------------------------------------------

def save_dataset(path, data: DataMatrix, spec: SubspaceSpec | None = None, extra=None):
    meta = {"spec": spec.to_dict() if spec is not None else None,
            "fingerprint": data.fingerprint()}
    if data.image_shape is not None:
        meta["image_shape"] = list(data.image_shape)
    if extra:
        meta.update(extra)
    tensors = {"x": data.x}
    if data.labels is not None:
        tensors["labels"] = data.labels
    return container.save_tensors(path, tensors, meta)


def load_dataset(path):
    """Inverse of :func:`save_dataset`; returns ``(data, meta)``."""
    tensors, meta = container.load_tensors(path)
    if "x" not in tensors:
        raise FormatError(f"{path}: no 'x' tensor in dataset container")
    shape = meta.get("image_shape")
    data = DataMatrix(tensors["x"], tensors.get("labels"), tuple(shape) if shape else None)
    return data, meta


# -- batches ---------------------------------------------------------------

class BatchSampler:
    """Draws uniformly random index subsets of fixed size without replacement."""

    def __init__(self, batch_size: int, n: int, rng=None, n_clusters: int | None = None):
        if batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if batch_size > n:
            raise DomainError(f"batch_size {batch_size} exceeds data size {n}")
        self.batch_size = int(batch_size)
        self.n = int(n)
        self.rng = make_rng(rng)
        if n_clusters and batch_size < 10 * n_clusters:
            log.warning("batch size %d is below 10 points per cluster for K=%d; "
                        "batches may not represent every cluster", batch_size, n_clusters)

    def sample(self) -> np.ndarray:
        return self.rng.choice(self.n, size=self.batch_size, replace=False)

    def __iter__(self):
        while True:
            yield self.sample()


def sample_batch(sampler: BatchSampler) -> np.ndarray:
    return sampler.sample()
