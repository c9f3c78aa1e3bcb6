"""Spatial-spectral manifold embedding for hyperspectral images.

The subpackages cover cube I/O (:mod:`ssme.datacube`), neighborhood graphs
(:mod:`ssme.graph`), coupled local weights (:mod:`ssme.weights`), eigen
embeddings and baselines (:mod:`ssme.embed`), scoring (:mod:`ssme.evaluation`)
and the command-line pipeline (:mod:`ssme.pipeline`, :mod:`ssme.cli`).
"""
__version__ = "0.1.0"

from .datacube import HyperCube, LabelMap, load_cube, load_labels, synth_cube
from .embed import Embedding, embed_le, embed_lle, embed_osf, embed_pca, embed_ssme
from .estimators import (
    LaplacianEigenmaps,
    LocallyLinearEmbedding,
    NearestNeighborClassifier,
    OriginalSpectralFeatures,
    PCAEmbedding,
    SpatialSpectralEmbedding,
)
from .evaluation import EvalReport, classify_nn, compute_metrics, make_split
from .exceptions import SSMEError
from .graph import spatial_grid, spectral_knn
from .weights import build_affinity, solve_all_weights

__all__ = [
    "Embedding", "EvalReport", "HyperCube", "LabelMap", "LaplacianEigenmaps",
    "LocallyLinearEmbedding", "NearestNeighborClassifier", "OriginalSpectralFeatures",
    "PCAEmbedding", "SSMEError", "SpatialSpectralEmbedding", "build_affinity",
    "classify_nn", "compute_metrics", "embed_le", "embed_lle", "embed_osf", "embed_pca",
    "embed_ssme", "load_cube", "load_labels", "make_split", "solve_all_weights",
    "spatial_grid", "spectral_knn", "synth_cube",
]
