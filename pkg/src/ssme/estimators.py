"""scikit-learn compatible wrappers around the embedding and 1-NN functions.

Inputs follow scikit-learn's ``(n_samples, n_features)`` orientation.  The
spatial-spectral transformer additionally needs the image layout, so it takes
a :class:`~ssme.datacube.HyperCube`, a ``(height, width, bands)`` array, or a
2-D array together with ``image_shape``.
"""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datacube import HyperCube
from .embed import embed_le, embed_lle, embed_osf, embed_ssme, pca_components
from .exceptions import ParameterError
from .graph import exact_neighbors, spatial_grid, spectral_knn
from .weights import DEFAULT_ETA, DEFAULT_RIDGE, build_affinity, solve_all_weights


def _spectral_matrix(X):
    return check_array(X, dtype=np.float64).T


class SpatialSpectralEmbedding(TransformerMixin, BaseEstimator):
    """Spatial-spectral manifold embedding of a hyperspectral image.

    Parameters
    ----------
    n_components : int, default=16
    n_neighbors : int, default=30
        Spectral neighbors per pixel.
    eta : float, default=1e-3
        Tolerance on the spatial coupling residual of the local regressions.
    ridge : float, default=1e-3
        Relative Tikhonov regularization of the local regressions.
    clamp : bool, default=True
        Clip center weights to [0, 1] before affinity fusion.
    affinity_scaling : {"mean_row_sum", None}, default="mean_row_sum"
    image_shape : tuple of int, optional
        ``(height, width)`` when ``X`` is passed as a 2-D pixel matrix.
    n_jobs : int, optional

    Attributes
    ----------
    embedding_ : ndarray of shape (n_pixels, n_components)
    neighbors_ : SpectralNeighborhood
    weights_ : WeightSet
    affinity_ : scipy.sparse.csr_matrix
    eigenvalues_ : ndarray
    """

    def __init__(self, n_components=16, n_neighbors=30, eta=DEFAULT_ETA, ridge=DEFAULT_RIDGE,
                 clamp=True, affinity_scaling="mean_row_sum", image_shape=None, n_jobs=None):
        self.n_components = n_components
        self.n_neighbors = n_neighbors
        self.eta = eta
        self.ridge = ridge
        self.clamp = clamp
        self.affinity_scaling = affinity_scaling
        self.image_shape = image_shape
        self.n_jobs = n_jobs

    def _layout(self, X):
        if isinstance(X, HyperCube):
            return X.samples(), X.shape
        X = np.asarray(X)
        if X.ndim == 3:
            h, w, b = X.shape
            return check_array(X.reshape(h * w, b), dtype=np.float64), (h, w)
        if self.image_shape is None:
            raise ParameterError("2-D input needs image_shape=(height, width)")
        h, w = self.image_shape
        S = check_array(X, dtype=np.float64)
        if S.shape[0] != h * w:
            raise ParameterError(f"{S.shape[0]} rows do not match image_shape {self.image_shape}")
        return S, (h, w)

    def fit(self, X, y=None):
        S, (h, w) = self._layout(X)
        Xd = S.T
        self.neighbors_ = spectral_knn(Xd, self.n_neighbors, n_jobs=self.n_jobs)
        self.weights_ = solve_all_weights(Xd, spatial_grid(h, w), self.neighbors_,
                                          eta=self.eta, ridge=self.ridge, n_jobs=self.n_jobs)
        self.affinity_ = build_affinity(self.weights_, clamp=self.clamp)
        emb = embed_ssme(self.affinity_, self.n_components,
                         affinity_scaling=self.affinity_scaling)
        self.eigenvalues_ = emb.eigenvalues
        self.embedding_ = emb.samples()
        self.n_features_in_ = S.shape[1]
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_


class LocallyLinearEmbedding(TransformerMixin, BaseEstimator):
    def __init__(self, n_components=60, n_neighbors=30, ridge=1e-3, n_jobs=None):
        self.n_components = n_components
        self.n_neighbors = n_neighbors
        self.ridge = ridge
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        emb = embed_lle(_spectral_matrix(X), self.n_neighbors, self.n_components,
                        self.ridge, n_jobs=self.n_jobs)
        self.embedding_ = emb.samples()
        self.eigenvalues_ = emb.eigenvalues
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_


class LaplacianEigenmaps(TransformerMixin, BaseEstimator):
    """Laplacian eigenmaps on a heat-kernel kNN graph (``sigma="auto"`` uses the
    mean neighbor distance)."""

    def __init__(self, n_components=60, n_neighbors=30, sigma="auto", n_jobs=None):
        self.n_components = n_components
        self.n_neighbors = n_neighbors
        self.sigma = sigma
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        emb = embed_le(_spectral_matrix(X), self.n_neighbors, self.n_components, self.sigma,
                       n_jobs=self.n_jobs)
        self.embedding_ = emb.samples()
        self.eigenvalues_ = emb.eigenvalues
        self.sigma_ = emb.provenance["sigma"]
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_


class PCAEmbedding(TransformerMixin, BaseEstimator):
    def __init__(self, n_components=30):
        self.n_components = n_components

    def fit(self, X, y=None):
        S = check_array(X, dtype=np.float64)
        self.mean_, comps, self.explained_variance_, self.explained_variance_ratio_ = \
            pca_components(S, self.n_components)
        self.components_ = comps.T
        self.n_features_in_ = S.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        S = check_array(X, dtype=np.float64)
        return (S - self.mean_) @ self.components_.T


class OriginalSpectralFeatures(TransformerMixin, BaseEstimator):
    """Identity transform; keeps raw spectra as the baseline representation."""

    def fit(self, X, y=None):
        self.n_features_in_ = check_array(X).shape[1]
        return self

    def transform(self, X):
        return embed_osf(_spectral_matrix(X)).samples()


class NearestNeighborClassifier(ClassifierMixin, BaseEstimator):
    """Exact 1-NN; ties go to the earliest training sample."""

    def __init__(self, n_jobs=None):
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.X_train_ = X
        self.y_train_ = y
        self.classes_ = np.unique(y)
        return self

    def predict(self, X):
        check_is_fitted(self, "X_train_")
        X = check_array(X, dtype=np.float64)
        nn, _ = exact_neighbors(X, self.X_train_, 1, n_jobs=self.n_jobs)
        return self.y_train_[nn[:, 0]]
