"""Staged clustering pipelines shared by the CLI, the verifier and the tests.

Every pipeline ends in the same place: pseudo-labels from spectral
clustering of the training coefficients, then a rotation ``R`` fitted so the
nearest axis-aligned block of ``R h(x)`` reproduces them. The fitted
:class:`Clusterer` is inductive and classifies new points in batches.
"""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .config import DataConfig, ExperimentConfig
from .dataio import (DataMatrix, SubspaceSpec, generate_union_of_subspaces, load_dataset,
                     load_idx, load_mnist_subset, sample_from_bases)
from .edsc import DENSE_BUDGET, solve_edsc_closed_form
from .errors import DomainError
from .network import Lambdas, Schedule, SscnModel, train_sscn
from .numerics import make_rng, numerical_rank, split_rng
from .siamese import LinearEmbeddingModel, analytic_optimum, train_linear
from .spectral import ClusterAssignment, pseudo_labels
from .stiefel import AxisAlignedSubspaces, classify, train_rotation

log = logging.getLogger(__name__)

DEFAULT_MNIST_DIR = "/root/data/mnist"


# -- data ----------------------------------------------------------------------

def mnist_root(cfg: DataConfig | None = None) -> Path:
    """``data.mnist_root``, else ``$SSCN_MNIST_DIR``, else the default location."""
    if cfg is not None and cfg.mnist_root:
        return Path(cfg.mnist_root)
    return Path(os.environ.get("SSCN_MNIST_DIR", DEFAULT_MNIST_DIR))


def load_training_data(cfg: DataConfig):
    """Return ``(train, holdout_or_None)`` for a data config."""
    cfg.validate()
    holdout = None
    if cfg.source == "synthetic":
        spec = SubspaceSpec.from_dict(cfg.synthetic)
        data, bases = generate_union_of_subspaces(spec)
        if cfg.holdout_points_per_cluster:
            fresh = split_rng(make_rng(spec.seed), 1)[0]
            holdout = sample_from_bases(bases, cfg.holdout_points_per_cluster,
                                        spec.noise_sigma, fresh)
    elif cfg.source == "mnist":
        root = mnist_root(cfg)
        data = load_mnist_subset(root, cfg.split, tuple(cfg.digits), cfg.n, cfg.sample_seed,
                                 scale=cfg.scale)
        if cfg.holdout_n:
            if cfg.holdout_split == cfg.split:
                raise DomainError("data.holdout_split must differ from data.split")
            holdout = load_mnist_subset(root, cfg.holdout_split, tuple(cfg.digits),
                                        cfg.holdout_n, cfg.holdout_seed, scale=cfg.scale)
    elif cfg.source == "idx":
        data = load_idx(cfg.images, cfg.labels, scale=cfg.scale)
    else:
        data, _ = load_dataset(cfg.path)
    return data, holdout


def n_classes(data: DataMatrix, cfg: ExperimentConfig) -> int:
    if cfg.model.k is not None:
        return cfg.model.k
    if cfg.data.source == "synthetic":
        return len(cfg.data.synthetic["cluster_dims"])
    if data.labels is None:
        raise DomainError("model.k is required for unlabelled data")
    return int(np.unique(data.labels).size)


def resolve_q(x, k: int, q: int | None = None) -> int:
    """Per-cluster dimension: ``q`` if given, else ``1 + ceil(rank / K)``."""
    if q is not None:
        return int(q)
    return 1 + math.ceil(numerical_rank(x) / k)


def resolve_top_m(top_m, q: int):
    if top_m == "auto":
        return 3 * q
    if top_m is None or isinstance(top_m, int):
        return top_m
    raise DomainError(f"top_m must be 'auto', null or an integer, got {top_m!r}")


# -- fitted classifier -----------------------------------------------------------

@dataclass
class Clusterer:
    """An embedding model plus rotation; labels are pseudo-label classes."""

    kind: str
    embedder: object
    rotation: np.ndarray
    subspaces: AxisAlignedSubspaces
    class_to_block: np.ndarray

    @property
    def k(self) -> int:
        return self.subspaces.k

    def _block_to_class(self):
        inv = np.empty_like(self.class_to_block)
        inv[self.class_to_block] = np.arange(self.class_to_block.size)
        return inv

    def iter_classify(self, x, batch_size: int = 1000):
        """Yield ``(start, labels, soft)`` chunk by chunk."""
        x = x.x if isinstance(x, DataMatrix) else np.asarray(x, dtype=np.float64)
        inv = self._block_to_class()
        for start in range(0, x.shape[1], batch_size):
            part = classify(self.embedder, self.rotation, x[:, start:start + batch_size],
                            self.subspaces)
            yield start, inv[part.labels], part.soft[:, self.class_to_block]

    def classify(self, x, batch_size: int | None = None) -> ClusterAssignment:
        x = x.x if isinstance(x, DataMatrix) else np.asarray(x, dtype=np.float64)
        n = x.shape[1]
        labels = np.empty(n, dtype=np.int64)
        soft = np.empty((n, self.k))
        for start, lab, sft in self.iter_classify(x, batch_size or max(n, 1)):
            labels[start:start + lab.size] = lab
            soft[start:start + lab.size] = sft
        return ClusterAssignment(labels, self.k, soft)

    def save(self, path, **meta) -> Path:
        info = dict(meta, k=self.k, q=self.subspaces.q,
                    class_to_block=self.class_to_block.tolist())
        if self.kind == "sscn":
            self.embedder.rotation.value = self.rotation.copy()
            return self.embedder.save(path, **info)
        tensors = {"w": self.embedder.w, "rotation": self.rotation}
        info.update(self.embedder.meta, lam=self.embedder.lam, kind="siamese-linear")
        return container.save_tensors(path, tensors, info)

    @classmethod
    def load(cls, path) -> "Clusterer":
        tensors, meta = container.load_tensors(path)
        kind = meta.get("kind")
        if kind == "sscn":
            model, meta = SscnModel.load(path)
            rotation = model.rotation.value.copy()
        elif kind == "siamese-linear":
            if "rotation" not in tensors:
                raise DomainError(f"{path}: linear model has no fitted rotation")
            model = LinearEmbeddingModel(tensors["w"], meta["lam"])
            rotation = tensors["rotation"]
        else:
            raise DomainError(f"{path}: checkpoint kind {kind!r} cannot classify new points")
        sub = AxisAlignedSubspaces(int(meta["k"]), int(meta["q"]))
        return cls(kind, model, rotation, sub, np.asarray(meta["class_to_block"], dtype=np.int64))

    @property
    def d_x(self) -> int:
        return self.embedder.d_x


@dataclass
class FitResult:
    clusterer: Clusterer | None
    pseudo: ClusterAssignment
    pseudo_index: np.ndarray
    in_sample: ClusterAssignment
    info: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)


def _pseudo_subset(n, rng):
    if n <= DENSE_BUDGET:
        return np.arange(n)
    log.info("pseudo-labels from a random subset of %d of %d points", DENSE_BUDGET, n)
    return np.sort(rng.choice(n, size=DENSE_BUDGET, replace=False))


def _fit_rotation(h, idx, k, q, top_m, rng, train_cfg, timings):
    t0 = time.perf_counter()
    hs = h[:, idx]
    pl = pseudo_labels(hs.T @ hs, k, rng, m=resolve_top_m(top_m, q))
    timings["pseudo_labels"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    sub = AxisAlignedSubspaces(k, q)
    rot = train_rotation(hs, pl.labels, sub, steps=train_cfg.rotation_steps,
                         r0=train_cfg.rotation_init, rng=rng, lr=train_cfg.rotation_lr)
    timings["rotation"] = time.perf_counter() - t0
    return pl, sub, rot


# -- pipelines -----------------------------------------------------------------

def fit_edsc(data: DataMatrix, cfg: ExperimentConfig, rng=None) -> FitResult:
    """Transductive baseline: closed-form coefficients then spectral clustering."""
    rng = make_rng(rng)
    k = n_classes(data, cfg)
    t0 = time.perf_counter()
    c = solve_edsc_closed_form(data, cfg.model.lam)
    timings = {"solve": time.perf_counter() - t0}
    q = resolve_q(data.x, k, cfg.model.q)
    t0 = time.perf_counter()
    pl = pseudo_labels(c, k, rng, m=resolve_top_m(cfg.train.top_m, q))
    timings["pseudo_labels"] = time.perf_counter() - t0
    return FitResult(None, pl, np.arange(data.n), pl, {"k": k, "q": q}, timings)


def fit_linear(data: DataMatrix, cfg: ExperimentConfig, rng=None) -> FitResult:
    """Linear siamese model (closed form or gradient-trained) + rotation classifier.

    ``model.mode = "auto"`` uses the closed form when the data rank fits in
    ``d_H`` and otherwise trains the rank-constrained model.
    """
    rng = make_rng(rng)
    r_model, r_pseudo = split_rng(rng, 2)
    m, t = cfg.model, cfg.train
    k = n_classes(data, cfg)
    q = resolve_q(data.x, k, m.q)
    d_h = m.d_h or k * q
    if d_h != k * q:
        raise DomainError(f"d_H = {d_h} must equal K*q = {k * q} for the block classifier")
    timings = {}
    mode = m.mode
    if mode == "auto":
        mode = "analytic" if numerical_rank(data.x) <= d_h else "trained"
    t0 = time.perf_counter()
    if mode == "analytic":
        model = analytic_optimum(data, m.lam, d_h, rotation=m.rotation, rng=r_model)
    else:
        model = train_linear(data, d_h, m.lam, lr=t.linear_lr, max_iter=t.linear_max_iter,
                             tol=t.linear_tol, batch_size=t.linear_batch_size, seed=r_model)
    timings["embedding"] = time.perf_counter() - t0
    h = model.embed(data)
    idx = _pseudo_subset(data.n, r_pseudo)
    pl, sub, rot = _fit_rotation(h, idx, k, q, t.top_m, r_pseudo, t, timings)
    clusterer = Clusterer("siamese-linear", model, rot.r, sub, rot.class_to_block)
    t0 = time.perf_counter()
    in_sample = clusterer.classify(data, cfg.batch_size)
    timings["classify"] = time.perf_counter() - t0
    info = {"k": k, "q": q, "d_h": d_h, "mode": mode, "n_params": model.n_params,
            "rotation_train_accuracy": rot.train_accuracy}
    return FitResult(clusterer, pl, idx, in_sample, info, timings)


def sscn_schedule(cfg: ExperimentConfig, n: int) -> Schedule:
    t = cfg.train
    return Schedule(pretrain_epochs=t.pretrain_epochs, joint_epochs=t.joint_epochs,
                    batch_size=min(cfg.batch_size or 1000, n), lr=t.lr, joint_lr=t.joint_lr,
                    steps_per_epoch=t.steps_per_epoch, normalize_latent=t.normalize_latent,
                    refit_embed=t.refit_embed)


def fit_sscn(data: DataMatrix, cfg: ExperimentConfig, rng=None, out_dir=None) -> FitResult:
    """Auto-encoder pre-training, joint self-expressive training, then the classifier.

    With ``out_dir`` the pre-trained auto-encoder is written to
    ``pretrain.sscn`` there; ``train.resume_from`` loads such a checkpoint
    and skips pre-training.
    """
    rng = make_rng(rng)
    r_init, r_train, r_pseudo = split_rng(rng, 3)
    m, t = cfg.model, cfg.train
    k = n_classes(data, cfg)
    q = m.q if m.q is not None else resolve_q(data.x, k, None)
    lambdas = Lambdas(**vars(m.lambdas))
    model = SscnModel(data.d, m.hidden, m.d_z, k, q, lambdas, r_init,
                      m.hidden_activation, m.out_activation, m.bias)
    skip = False
    if t.resume_from:
        pre, _ = SscnModel.load(t.resume_from)
        if pre.d_x != data.d:
            raise DomainError(f"checkpoint expects {pre.d_x}-dimensional points, data has {data.d}")
        if (pre.hidden, pre.d_z, pre.bias) != (model.hidden, model.d_z, model.bias):
            raise DomainError("checkpoint auto-encoder architecture differs from model config")
        for name, p in model.named_parameters().items():
            if name.startswith(("enc", "dec")):
                p.value = pre.named_parameters()[name].value.copy()
        skip = True
    on_pretrained = None
    if out_dir is not None:
        ckpt = Path(out_dir) / "pretrain.sscn"
        on_pretrained = lambda mdl: mdl.save(ckpt, stage="pretrain")  # noqa: E731
    res = train_sscn(model, data, schedule=sscn_schedule(cfg, data.n), rng=r_train,
                     skip_pretrain=skip, on_pretrained=on_pretrained)
    timings = dict(res.timings)
    h = model.embed(data)
    idx = _pseudo_subset(data.n, r_pseudo)
    pl, sub, rot = _fit_rotation(h, idx, k, q, t.top_m, r_pseudo, t, timings)
    clusterer = Clusterer("sscn", model, rot.r, sub, rot.class_to_block)
    t0 = time.perf_counter()
    in_sample = clusterer.classify(data, cfg.batch_size)
    timings["classify"] = time.perf_counter() - t0
    info = {"k": k, "q": q, "d_h": k * q, "resumed": skip, "n_params": model.n_params(),
            "rotation_train_accuracy": rot.train_accuracy}
    return FitResult(clusterer, pl, idx, in_sample, info, timings, res.trace)


FITTERS = {"edsc": fit_edsc, "siamese-linear": fit_linear, "sscn": fit_sscn}


def fit(data: DataMatrix, cfg: ExperimentConfig, seed, out_dir=None) -> FitResult:
    kind = cfg.model.kind
    if kind == "sscn":
        return fit_sscn(data, cfg, seed, out_dir)
    return FITTERS[kind](data, cfg, seed)
