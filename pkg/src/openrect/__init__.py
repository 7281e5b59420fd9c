"""Post-training rectification of classifiers against unknown-unknown classes."""

from .classifiers import GDA, KNN, MLP, DecisionTree, LinearSVM, load_model, make_classifier, save_model
from .csi import csi_rectify, seeded_kmeans
from .dataset import Dataset, GaussianMixtureSpec, generate_gaussian, load_csv, make_scenario
from .metrics import EvalReport, auroc, macro_f_measure, openness
from .rtscv import RtscvConfig, RtscvOutcome, evaluate_rectified, rectify

__version__ = "0.1.0"

__all__ = [
    "GDA",
    "KNN",
    "MLP",
    "DecisionTree",
    "LinearSVM",
    "Dataset",
    "EvalReport",
    "GaussianMixtureSpec",
    "RtscvConfig",
    "RtscvOutcome",
    "auroc",
    "csi_rectify",
    "evaluate_rectified",
    "generate_gaussian",
    "load_csv",
    "load_model",
    "macro_f_measure",
    "make_classifier",
    "make_scenario",
    "openness",
    "rectify",
    "save_model",
    "seeded_kmeans",
]
