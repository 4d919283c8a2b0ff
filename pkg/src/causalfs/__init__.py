"""Causal multi-view unsupervised feature selection.

Alternating minimization over per-view orthogonal projections, a shared
nonnegative spectral embedding, confounder indicator gates, and simplex
sample weights that balance treatment groups in feature space.
"""

__version__ = "0.1.0"

from .dataset import (HyperParams, MultiViewDataset, StandardizeReport,
                      load_dataset, save_dataset, standardize)
from .graph import LaplacianGraph, build_laplacian, knn_affinity
from .solver import (ModelState, fit, initialize, load_checkpoint, objective,
                     rank_features, save_checkpoint, select_features)
from .synth import SynthSpec, generate
from .evaluate import EvaluationReport, accuracy, evaluate_selection, kmeans, nmi

__all__ = [
    "HyperParams", "MultiViewDataset", "StandardizeReport",
    "load_dataset", "save_dataset", "standardize",
    "LaplacianGraph", "build_laplacian", "knn_affinity",
    "ModelState", "fit", "initialize", "load_checkpoint", "objective",
    "rank_features", "save_checkpoint", "select_features",
    "SynthSpec", "generate",
    "EvaluationReport", "accuracy", "evaluate_selection", "kmeans", "nmi",
    "__version__",
]
