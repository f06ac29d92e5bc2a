"""Penalized least-squares discriminant analysis for functions on triangulated surfaces."""

__version__ = "0.1.0"

from .classifier import DiscriminantModel, LabeledFunctionalData, choose_threshold, fit, score, score_samples
from .fem import FemOperators
from .mesh import TriangleMesh, icosphere, load_mesh, save_mesh
from .spectral import EigenBasis, laplace_beltrami_eigs

__all__ = [
    "DiscriminantModel",
    "EigenBasis",
    "FemOperators",
    "LabeledFunctionalData",
    "TriangleMesh",
    "choose_threshold",
    "fit",
    "icosphere",
    "laplace_beltrami_eigs",
    "load_mesh",
    "save_mesh",
    "score",
    "score_samples",
]
