"""Experiment configuration: nested dataclasses with a strict JSON round trip.

Every field has a default. Unknown keys at any level raise
:class:`~sscn.errors.DomainError` so that typos never silently fall back to
defaults.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .dataio import SubspaceSpec
from .errors import DomainError

DATA_SOURCES = ("synthetic", "mnist", "idx", "file")
MODEL_KINDS = ("edsc", "siamese-linear", "sscn")
LINEAR_MODES = ("auto", "analytic", "trained")


@dataclass
class DataConfig:
    """Where the training points (and optional held-out points) come from.

    ``source`` selects one of: ``synthetic`` (``synthetic`` holds a
    :class:`SubspaceSpec`), ``mnist`` (class subset read from
    ``mnist_root``), ``idx`` (explicit ``images``/``labels`` IDX files) or
    ``file`` (a dataset container written by ``sscn generate``).
    """

    source: str = "synthetic"
    synthetic: dict = field(default_factory=lambda: SubspaceSpec().to_dict())
    path: str | None = None
    images: str | None = None
    labels: str | None = None
    mnist_root: str | None = None
    split: str = "test"
    digits: list = field(default_factory=lambda: [0, 1, 2])
    n: int | None = 1000
    sample_seed: int = 0
    scale: bool = True
    # held-out set for inductive evaluation; synthetic draws fresh points
    # from the same subspaces, mnist samples another split
    holdout_points_per_cluster: list | None = None
    holdout_split: str = "train"
    holdout_n: int | None = None
    holdout_seed: int = 1

    def validate(self):
        if self.source not in DATA_SOURCES:
            raise DomainError(f"data.source must be one of {DATA_SOURCES}, got {self.source!r}")
        if self.source == "synthetic":
            SubspaceSpec.from_dict(self.synthetic).validate()
        if self.source == "file" and not self.path:
            raise DomainError("data.source 'file' needs data.path")
        if self.source == "idx" and not (self.images and self.labels):
            raise DomainError("data.source 'idx' needs data.images and data.labels")


@dataclass
class SscnLambdas:
    self_expr: float = 1.0
    recon: float = 1.0
    clf: float = 0.1


@dataclass
class ModelConfig:
    """Model family and its hyperparameters.

    ``k`` and ``q`` default to the number of labelled classes and the
    ``1 + ceil(rank / K)`` rule. ``d_h`` defaults to ``k * q``.
    """

    kind: str = "siamese-linear"
    lam: float = 100.0
    mode: str = "auto"
    k: int | None = None
    q: int | None = None
    d_h: int | None = None
    rotation: str = "identity"
    d_z: int = 10
    hidden: list = field(default_factory=lambda: [256])
    hidden_activation: str = "tanh"
    out_activation: str = "linear"
    bias: bool = True
    lambdas: SscnLambdas = field(default_factory=SscnLambdas)

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise DomainError(f"model.kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.mode not in LINEAR_MODES:
            raise DomainError(f"model.mode must be one of {LINEAR_MODES}, got {self.mode!r}")
        if self.lam <= 0:
            raise DomainError("model.lam must be positive")
        for name in ("k", "q", "d_h"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise DomainError(f"model.{name} must be >= 1")


@dataclass
class TrainConfig:
    """Optimization settings for every stage."""

    # siamese-linear gradient training
    linear_lr: float | None = None
    linear_max_iter: int = 200000
    linear_tol: float = 1e-9
    linear_batch_size: int | None = None
    # sscn stages
    pretrain_epochs: int = 100
    joint_epochs: int = 100
    lr: float = 1e-3
    joint_lr: float | None = None
    steps_per_epoch: int | None = None
    normalize_latent: bool = True
    refit_embed: bool = True
    resume_from: str | None = None
    # pseudo-labels; "auto" keeps the 3q strongest entries per row, null is dense
    top_m: int | str | None = "auto"
    # rotation classifier
    rotation_steps: int = 2000
    rotation_lr: float = 1e-2
    rotation_init: str = "class-pca"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: list = field(default_factory=lambda: [0])
    batch_size: int | None = None
    out_dir: str = "runs/default"

    def validate(self) -> "ExperimentConfig":
        self.data.validate()
        self.model.validate()
        if not self.seeds:
            raise DomainError("at least one seed is required")
        if self.batch_size is not None and self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d, "config")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DomainError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise DomainError(f"{where} must be a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise DomainError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in d.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            value = _build(hint, value, f"{where}.{key}")
        kwargs[key] = value
    return cls(**kwargs)


def merge_overrides(cfg: ExperimentConfig, seeds=None, out_dir=None, batch_size=None,
                    data_path=None) -> ExperimentConfig:
    """Apply command-line flags on top of a loaded config (flags win)."""
    if seeds:
        cfg.seeds = list(seeds)
    if out_dir is not None:
        cfg.out_dir = str(out_dir)
    if batch_size is not None:
        cfg.batch_size = int(batch_size)
    if data_path is not None:
        cfg.data.source = "file"
        cfg.data.path = str(data_path)
    return cfg.validate()
