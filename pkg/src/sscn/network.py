"""Nonlinear siamese subspace clustering network trained on mini-batches.

Objective on a batch ``X`` (points as columns)::

    0.5 ||Q||^2 + (lam1/2) ||Z - Z Q||^2 + (lam2/2) ||X - dec(Z Q)||^2
        + lam3 * CE(softmin(R H), targets)

with ``Z = enc(X)``, ``H = W_h Z`` and ``Q = H^T H``. ``Q`` is only ever
``batch x batch``.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import container
from .dataio import BatchSampler, DataMatrix
from .errors import ConvergenceError, DomainError
from .numerics import make_rng, numerical_rank
from .siamese import analytic_optimum, train_linear

log = logging.getLogger(__name__)


@dataclass
class Lambdas:
    self_expr: float = 1.0   # lam1, latent self-expression
    recon: float = 1.0       # lam2, reconstruction
    clf: float = 0.1         # lam3, classifier cross-entropy


class SscnModel:
    """Encoder, mirrored decoder, linear embedding ``W_h`` and rotation ``R``.

    Parameters
    ----------
    d_x : int
    hidden : list of int
        Hidden widths of the encoder; the decoder mirrors them.
    d_z, k, q : int
        Latent width, cluster count and per-cluster embedding dimension;
        ``d_H = k * q``.
    """

    def __init__(self, d_x, hidden=(256,), d_z=10, k=3, q=2, lambdas=None, rng=None,
                 hidden_activation="tanh", out_activation="linear", bias=True):
        rng = make_rng(rng)
        self.d_x, self.d_z, self.k, self.q = int(d_x), int(d_z), int(k), int(q)
        self.hidden = [int(h) for h in hidden]
        self.hidden_activation = hidden_activation
        self.out_activation = out_activation
        self.bias = bool(bias)
        self.lambdas = lambdas or Lambdas()
        self.encoder = ad.MLP([self.d_x, *self.hidden, self.d_z], rng, "enc",
                              hidden_activation, "linear", self.bias)
        self.decoder = ad.MLP([self.d_z, *self.hidden[::-1], self.d_x], rng, "dec",
                              hidden_activation, out_activation, self.bias)
        self.embed_w = ad.Parameter(rng.standard_normal((self.d_h, self.d_z)) / np.sqrt(self.d_z),
                                    "embed.w")
        self.rotation = ad.Parameter(np.eye(self.d_h), "rotation")

    @property
    def d_h(self) -> int:
        return self.k * self.q

    def parameters(self, include_rotation=True) -> list:
        ps = self.encoder.parameters() + self.decoder.parameters() + [self.embed_w]
        return ps + [self.rotation] if include_rotation else ps

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def n_params(self, include_rotation=False) -> int:
        return sum(p.value.size for p in self.parameters(include_rotation))

    def encode(self, x) -> np.ndarray:
        x = x.x if isinstance(x, DataMatrix) else np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.d_x:
            raise DomainError(f"expected {self.d_x}-dimensional points, got {x.shape[0]}")
        return self.encoder(ad.Tensor(x)).value

    def embed(self, x) -> np.ndarray:
        """``H = W_h enc(X)``, the unrotated embedding used by the classifier."""
        return self.embed_w.value @ self.encode(x)

    def config(self) -> dict:
        return {"d_x": self.d_x, "hidden": self.hidden, "d_z": self.d_z, "k": self.k,
                "q": self.q, "lambdas": asdict(self.lambdas),
                "hidden_activation": self.hidden_activation,
                "out_activation": self.out_activation, "bias": self.bias}

    def save(self, path, **meta):
        tensors = {name: p.value for name, p in self.named_parameters().items()}
        return container.save_tensors(path, tensors, dict(meta, kind="sscn", model=self.config()))

    @classmethod
    def load(cls, path):
        tensors, meta = container.load_tensors(path)
        cfg = dict(meta["model"])
        lambdas = Lambdas(**cfg.pop("lambdas"))
        model = cls(lambdas=lambdas, rng=0, **cfg)
        for name, p in model.named_parameters().items():
            if tensors[name].shape != p.value.shape:
                raise DomainError(f"checkpoint tensor {name} has shape {tensors[name].shape}")
            p.value = tensors[name].copy()
        return model, meta

    def load_state(self, other: "SscnModel"):
        for name, p in self.named_parameters().items():
            p.value = other.named_parameters()[name].value.copy()


def forward_sscn(model: SscnModel, x_batch):
    """Return graph tensors ``(z, h, q, x_hat)`` for a batch of columns."""
    xb = x_batch.x if isinstance(x_batch, DataMatrix) else x_batch
    x = xb if isinstance(xb, ad.Tensor) else ad.Tensor(xb, name="x")
    if x.shape[0] != model.d_x:
        raise DomainError(f"expected {model.d_x}-dimensional points, got {x.shape[0]}")
    z = model.encoder(x)
    h = model.embed_w @ z
    q = h.T @ h
    x_hat = model.decoder(z @ q)
    return z, h, q, x_hat


def sscn_loss(model: SscnModel, x_batch, targets=None, lambdas: Lambdas | None = None):
    """Scalar loss tensor and a dict with the value of each term.

    The classifier term is active only when ``targets`` (block indices per
    column) are given and ``lambdas.clf > 0``.
    """
    lam = lambdas or model.lambdas
    xb = x_batch.x if isinstance(x_batch, DataMatrix) else np.asarray(x_batch, dtype=np.float64)
    x = ad.Tensor(xb, name="x")
    z, h, q, x_hat = forward_sscn(model, x)
    coef = 0.5 * ad.sum_squares(q)
    latent = (0.5 * lam.self_expr) * ad.sum_squares(z - z @ q)
    recon = (0.5 * lam.recon) * ad.sum_squares(x - x_hat)
    total = coef + latent + recon
    terms = {"coef": float(coef.value), "self_expr": float(latent.value),
             "recon": float(recon.value), "clf": 0.0}
    if targets is not None and lam.clf > 0:
        clf = lam.clf * ad.softmin_cross_entropy(model.rotation @ h, targets, model.k, model.q)
        total = total + clf
        terms["clf"] = float(clf.value)
    terms["total"] = float(total.value)
    return total, terms


def autoencoder_loss(model: SscnModel, x_batch, lam_recon: float | None = None):
    """Plain reconstruction ``(lam2/2)||X - dec(enc(X))||^2`` for pre-training."""
    lam = model.lambdas.recon if lam_recon is None else lam_recon
    x = ad.Tensor(x_batch, name="x")
    recon = (0.5 * lam) * ad.sum_squares(x - model.decoder(model.encoder(x)))
    return recon, {"coef": 0.0, "self_expr": 0.0, "recon": float(recon.value), "clf": 0.0,
                   "total": float(recon.value)}


@dataclass
class Schedule:
    """Staged training plan: auto-encoder pre-training, then joint training.

    The classifier stage is run separately (pseudo-labels + rotation fit).
    """

    pretrain_epochs: int = 100
    joint_epochs: int = 100
    batch_size: int = 1000
    lr: float = 1e-3
    joint_lr: float | None = None    # defaults to ``lr``
    betas: tuple = (0.9, 0.999)
    steps_per_epoch: int | None = None
    init_embed: str = "analytic"
    normalize_latent: bool = True
    refit_embed: bool = True
    divergence_factor: float = 1e3


@dataclass
class TrainResult:
    model: SscnModel
    trace: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def write_trace_csv(self, path):
        write_trace_csv(path, self.trace)


def write_trace_csv(path, trace):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["epoch", "stage", "total", "coef", "self_expr", "recon", "clf"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in trace:
            w.writerow({c: row[c] for c in cols})


def _run_stage(model, data_x, sampler, params, loss_fn, epochs, steps, sched, stage, trace, lr):
    opt = ad.Adam(params, lr=lr, betas=tuple(sched.betas))
    initial = None
    for epoch in range(epochs):
        sums = {}
        for _ in range(steps):
            idx = sampler.sample()
            loss, terms = loss_fn(data_x[:, idx])
            opt.zero_grad()
            ad.backward(loss, params)
            opt.step()
            for key, v in terms.items():
                sums[key] = sums.get(key, 0.0) + v
        row = {key: v / steps for key, v in sums.items()}
        row.update(epoch=epoch, stage=stage)
        trace.append(row)
        if initial is None:
            initial = row["total"]
        if not np.isfinite(row["total"]) or row["total"] > sched.divergence_factor * max(initial, 1e-300):
            raise ConvergenceError(f"stage {stage} diverged at epoch {epoch} "
                                   f"(loss {row['total']:.4g})", [r["total"] for r in trace])


def normalize_latent_scale(model: SscnModel, x) -> float:
    """Rescale the latent codes to unit mean squared column norm.

    The last encoder layer is multiplied by ``c`` and the first decoder
    weight by ``1/c``, so the auto-encoder computes the same function. Only
    the scale seen by the self-expression term changes. Returns ``c``.
    """
    z = model.encode(x)
    rms = float(np.sqrt(np.mean(np.sum(z * z, axis=0))))
    if rms == 0.0 or not np.isfinite(rms):
        return 1.0
    c = 1.0 / rms
    last = model.encoder.layers[-1]
    last.w.value = last.w.value * c
    if last.b is not None:
        last.b.value = last.b.value * c
    first = model.decoder.layers[0]
    first.w.value = first.w.value / c
    return c


def init_embedding_analytic(model: SscnModel, z):
    """Set ``W_h`` to the closed-form optimum for the current latent codes.

    Falls back to leaving ``W_h`` unchanged when ``d_H`` is below the rank
    of ``Z``.
    """
    if numerical_rank(z, 1e-8) > model.d_h:
        log.info("latent rank exceeds d_H; keeping random embedding init")
        return False
    lin = analytic_optimum(z, model.lambdas.self_expr, model.d_h, rank_tol=1e-8)
    model.embed_w.value = lin.w
    return True


def refit_embedding(model: SscnModel, z, rng=None, **train_kw) -> str:
    """Replace ``W_h`` by the optimum of the coefficient terms for fixed ``Z``.

    Uses the closed form when ``rank(Z) <= d_H`` and otherwise gradient
    training of the rank-constrained linear model. Returns which path ran.
    """
    if init_embedding_analytic(model, z):
        return "analytic"
    kw = dict(tol=1e-9, max_iter=200000)
    kw.update(train_kw)
    lin = train_linear(z, model.d_h, model.lambdas.self_expr, seed=rng, **kw)
    model.embed_w.value = lin.w
    return "trained"


def train_sscn(model: SscnModel, data, sampler: BatchSampler | None = None,
               schedule: Schedule | None = None, rng=None, skip_pretrain: bool = False,
               on_pretrained=None) -> TrainResult:
    """Stage (a): auto-encoder pre-training; stage (b): joint self-expression.

    Between the stages the latent scale is normalized (function-preserving)
    so that ``lam1`` has a data-independent meaning. After stage (b),
    ``W_h`` is optionally refit to the coefficient-term optimum on a batch
    of final latent codes.

    Parameters
    ----------
    sampler : BatchSampler, optional
        Defaults to uniform batches of ``schedule.batch_size``.
    skip_pretrain : bool
        Resume from an already pre-trained auto-encoder.
    on_pretrained : callable, optional
        Called with the model after stage (a), e.g. to checkpoint it.
    """
    sched = schedule or Schedule()
    x = data.x if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)
    n = x.shape[1]
    rng = make_rng(rng)
    if sampler is None:
        sampler = BatchSampler(min(sched.batch_size, n), n, rng, n_clusters=model.k)
    steps = sched.steps_per_epoch or max(1, int(np.ceil(n / sampler.batch_size)))
    trace, timings = [], {}
    ae_params = model.encoder.parameters() + model.decoder.parameters()
    t0 = time.perf_counter()
    if not skip_pretrain and sched.pretrain_epochs > 0:
        _run_stage(model, x, sampler, ae_params, lambda xb: autoencoder_loss(model, xb),
                   sched.pretrain_epochs, steps, sched, "pretrain", trace, sched.lr)
        if on_pretrained is not None:
            on_pretrained(model)
    timings["pretrain"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    probe = x[:, sampler.sample()]
    if sched.normalize_latent and (sched.joint_epochs > 0 or sched.refit_embed):
        normalize_latent_scale(model, probe)
    if sched.joint_epochs > 0:
        if sched.init_embed == "analytic":
            init_embedding_analytic(model, model.encode(probe))
        joint_params = ae_params + [model.embed_w]
        lr = sched.lr if sched.joint_lr is None else sched.joint_lr
        _run_stage(model, x, sampler, joint_params, lambda xb: sscn_loss(model, xb),
                   sched.joint_epochs, steps, sched, "joint", trace, lr)
    timings["joint"] = time.perf_counter() - t0
    if sched.refit_embed:
        t0 = time.perf_counter()
        refit_embedding(model, model.encode(x[:, sampler.sample()]), rng)
        timings["refit"] = time.perf_counter() - t0
    return TrainResult(model, trace, timings)


def latent_coefficients(model: SscnModel, x) -> np.ndarray:
    """Dense ``Q = H^T H`` over ``x`` (for pseudo-labels on a training set)."""
    h = model.embed(x)
    return h.T @ h
