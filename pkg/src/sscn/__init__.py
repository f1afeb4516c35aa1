"""Siamese self-expressive subspace clustering.

Closed-form and learned solvers for dense self-expression, an inductive
classifier on rotated axis-aligned subspaces, and a nonlinear
auto-encoder variant trained on mini-batches.
"""
from .config import ExperimentConfig
from .dataio import DataMatrix, SubspaceSpec, generate_union_of_subspaces
from .edsc import CoefficientMatrix, solve_edsc_closed_form
from .errors import (ConvergenceError, DomainError, FormatError, GradientError, NumericalError,
                     ResourceError, SSCNError)
from .kernels import BACKEND
from .metrics import accuracy, adjusted_rand_index, metric_report, normalized_mutual_info
from .network import SscnModel, train_sscn
from .pipeline import Clusterer, fit
from .siamese import LinearEmbeddingModel, analytic_optimum, train_linear
from .spectral import ClusterAssignment, pseudo_labels, spectral_cluster
from .stiefel import AxisAlignedSubspaces, classify, train_rotation

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AxisAlignedSubspaces", "ClusterAssignment", "Clusterer", "CoefficientMatrix",
    "ConvergenceError", "DataMatrix", "DomainError", "ExperimentConfig", "FormatError",
    "GradientError", "LinearEmbeddingModel", "NumericalError", "ResourceError", "SSCNError",
    "SscnModel", "SubspaceSpec", "accuracy", "adjusted_rand_index", "analytic_optimum",
    "classify", "fit", "generate_union_of_subspaces", "metric_report",
    "normalized_mutual_info", "pseudo_labels", "solve_edsc_closed_form", "spectral_cluster",
    "train_linear", "train_rotation", "train_sscn",
]
