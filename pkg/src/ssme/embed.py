"""Eigen-embeddings: the spatial-spectral method and the PCA/LE/LLE/OSF baselines.

All functions take a ``D x N`` spectral matrix (or an affinity matrix) and
return an :class:`Embedding` whose ``Y`` is ``d x N``.  Graph-based methods
are normalized so that the columns of Y sum to zero and ``Y Yᵀ / N = I``.
"""
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .eigen import DENSE_LIMIT, eigen_smallest, fix_signs
from .exceptions import FormatError, NumericalError, ParameterError
from .graph import spectral_knn
from .utils import as_samples, check_positive_int

METHODS = ("ssme", "pca", "le", "lle", "osf")
CONSTRAINED = ("ssme", "le", "lle")
MAGIC = b"SSME"


@dataclass(frozen=True, eq=False)
class Embedding:
    Y: np.ndarray
    method: str
    provenance: dict = field(default_factory=dict)
    eigenvalues: np.ndarray = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}")
        Y = np.asarray(self.Y, dtype=np.float64)
        if Y.ndim != 2:
            raise ParameterError("embedding must be a d x N matrix")
        if not np.all(np.isfinite(Y)):
            raise NumericalError("embedding contains non-finite values")
        object.__setattr__(self, "Y", Y)

    @property
    def dims(self):
        return self.Y.shape[0]

    @property
    def pixels(self):
        return self.Y.shape[1]

    def samples(self):
        return np.ascontiguousarray(self.Y.T)

    def constraint_errors(self):
        """(‖Σ y_n‖₂, ‖Y Yᵀ / N − I‖_F)."""
        s = np.linalg.norm(self.Y.sum(axis=1))
        cov = self.Y @ self.Y.T / self.pixels
        return float(s), float(np.linalg.norm(cov - np.eye(self.dims)))


def normalize_embedding(V):
    """Map ``N x d`` eigenvectors to a ``d x N`` embedding with zero column sum
    and identity covariance (center, symmetric whitening, sqrt(N) scaling)."""
    N = V.shape[0]
    Vc = V - V.mean(axis=0)
    lam, R = np.linalg.eigh(Vc.T @ Vc)
    if lam.min() <= 1e-14 * max(lam.max(), 1e-300):
        raise NumericalError("embedding directions are linearly dependent after centering")
    Y = np.sqrt(N) * (Vc @ (R / np.sqrt(lam)) @ R.T)
    Y -= Y.mean(axis=0)
    return np.ascontiguousarray(Y.T)


def _check_dims(d, N):
    d = check_positive_int(d, "d")
    if d >= N:
        raise ParameterError(f"d={d} must be smaller than the pixel count {N}")
    return d


def reconstruction_operator(A):
    """M = (I − A)ᵀ (I − A) as a sparse matrix."""
    A = sp.csr_matrix(A, dtype=np.float64)
    IA = sp.identity(A.shape[0], format="csr") - A
    M = (IA.T @ IA).tocsr()
    return ((M + M.T) * 0.5).tocsr()


def embed_ssme(A, d=16, affinity_scaling="mean_row_sum", dense_limit=DENSE_LIMIT,
               provenance=None):
    """Embedding minimizing Σ‖y_i − Σ_k A_ik y_k‖² under the centering and
    unit-covariance constraints.

    Unit-norm local weights leave the rows of A summing to roughly sqrt(k), so
    the smallest eigenvectors of (I − A)ᵀ(I − A) become oscillatory.  With
    ``affinity_scaling="mean_row_sum"`` (default) A is divided by its mean row
    sum first; ``None`` uses A unchanged.
    """
    N = A.shape[0]
    d = _check_dims(d, N)
    scale = 1.0
    if affinity_scaling == "mean_row_sum":
        s = float(A.sum()) / N
        scale = s if s > 0 else 1.0
    elif affinity_scaling not in (None, "none"):
        raise ParameterError(f"unknown affinity scaling {affinity_scaling!r}")
    vals, V = eigen_smallest(reconstruction_operator(A / scale), d, deflate_ones=True,
                             dense_limit=dense_limit)
    prov = dict(provenance or {}, d=d, affinity_scaling=str(affinity_scaling),
                affinity_scale=scale)
    return Embedding(normalize_embedding(V), "ssme", prov, vals)


def lle_weights(S, nbr, ridge=1e-3):
    """Sum-to-one reconstruction weights, one row per sample (N x k)."""
    N, k = nbr.shape
    W = np.empty((N, k))
    for s in range(0, N, 1024):
        idx = np.arange(s, min(s + 1024, N))
        Z = S[nbr[idx]] - S[idx][:, None, :]
        G = Z @ Z.transpose(0, 2, 1)
        tr = np.trace(G, axis1=1, axis2=2)
        reg = np.where(tr > 0, ridge * tr / k, ridge)
        G = G + reg[:, None, None] * np.eye(k)
        try:
            w = np.linalg.solve(G, np.ones((idx.size, k, 1)))[:, :, 0]
        except np.linalg.LinAlgError:
            raise NumericalError("singular local Gram matrix; use a positive ridge") from None
        W[idx] = w / w.sum(axis=1, keepdims=True)
    return W


def _neighbors(X, k, neighbors, n_jobs):
    if neighbors is None:
        return spectral_knn(X, k, n_jobs=n_jobs)
    if neighbors.k != k:
        raise ParameterError(f"precomputed neighborhood has k={neighbors.k}, expected {k}")
    return neighbors


def embed_lle(X, k=30, d=60, ridge=1e-3, dense_limit=DENSE_LIMIT, neighbors=None,
              n_jobs=None):
    """Classic LLE; ``neighbors`` may pass a precomputed SpectralNeighborhood."""
    S = as_samples(X)
    N = S.shape[0]
    k = check_positive_int(k, "k", 2)
    d = _check_dims(d, N)
    nbrs = _neighbors(X, k, neighbors, n_jobs)
    w = lle_weights(S, nbrs.indices, ridge)
    W = sp.csr_matrix((w.ravel(), (np.repeat(np.arange(N), k), nbrs.indices.ravel())),
                      shape=(N, N))
    vals, V = eigen_smallest(reconstruction_operator(W), d, deflate_ones=True,
                             dense_limit=dense_limit)
    prov = {"k": k, "d": d, "ridge": float(ridge)}
    return Embedding(normalize_embedding(V), "lle", prov, vals)


def heat_kernel_graph(nbrs, sigma="auto"):
    """Symmetric kNN adjacency with heat-kernel weights; returns (W, sigma)."""
    N, k = nbrs.indices.shape
    if sigma == "auto" or sigma is None:
        sigma = float(nbrs.distances.mean())
        if sigma == 0.0:
            sigma = 1.0
    sigma = float(sigma)
    if not sigma > 0:
        raise ParameterError("sigma must be positive or 'auto'")
    vals = np.exp(-(nbrs.distances.ravel() ** 2) / (2.0 * sigma**2))
    rows = np.repeat(np.arange(N), k)
    Wd = sp.csr_matrix((vals, (rows, nbrs.indices.ravel())), shape=(N, N))
    W = Wd.maximum(Wd.T).tocsr()
    return W, sigma


def laplacian(W):
    deg = np.asarray(W.sum(axis=1)).ravel()
    return sp.diags(deg) - W, deg


def embed_le(X, k=30, d=60, sigma="auto", dense_limit=DENSE_LIMIT, neighbors=None,
             n_jobs=None):
    """Laplacian eigenmaps: smallest non-constant solutions of L v = λ D v."""
    S = as_samples(X)
    N = S.shape[0]
    k = check_positive_int(k, "k")
    d = _check_dims(d, N)
    nbrs = _neighbors(X, k, neighbors, n_jobs)
    W, sigma = heat_kernel_graph(nbrs, sigma)
    n_comp, _ = connected_components(W, directed=False)
    if n_comp > 1:
        warnings.warn(f"neighborhood graph has {n_comp} connected components", RuntimeWarning)
    L, deg = laplacian(W)
    root = np.sqrt(deg)
    Dm = sp.diags(1.0 / root)
    Ln = (Dm @ L @ Dm).tocsr()
    Ln = ((Ln + Ln.T) * 0.5).tocsr()
    vals, U = eigen_smallest(Ln, d, deflate_ones=root, dense_limit=dense_limit)
    V = U / root[:, None]
    prov = {"k": k, "d": d, "sigma": sigma, "components": int(n_comp)}
    return Embedding(normalize_embedding(V), "le", prov, vals)


def pca_components(S, d):
    """Mean, top-``d`` loadings (D x d, sign-fixed), eigenvalues and variance ratios."""
    N, D = S.shape
    d = check_positive_int(d, "d")
    if d > min(D, N):
        raise ParameterError(f"d={d} exceeds min(D, N) = {min(D, N)}")
    mean = S.mean(axis=0)
    Sc = S - mean
    cov = Sc.T @ Sc / max(N - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    comps, _ = fix_signs(vecs[:, :d])
    total = vals.clip(min=0).sum()
    ratio = vals[:d].clip(min=0) / total if total > 0 else np.zeros(d)
    return mean, comps, vals[:d], ratio


def embed_pca(X, d=30):
    S = as_samples(X)
    mean, comps, vals, ratio = pca_components(S, d)
    prov = {"d": comps.shape[1], "explained_variance_ratio": ratio.tolist()}
    return Embedding(((S - mean) @ comps).T, "pca", prov, vals)


def embed_osf(X):
    X = np.asarray(X, dtype=np.float64)
    return Embedding(X.copy(), "osf", {"d": X.shape[0]})


# -- binary dump ----------------------------------------------------------------

def write_embedding(path, emb, provenance=True):
    """Little-endian dump: magic, u32 d, u32 N, then d*N float64 column-major."""
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", emb.dims, emb.pixels))
        fh.write(np.ascontiguousarray(emb.Y.T, dtype="<f8").tobytes())
    if provenance:
        items = dict(emb.provenance, method=emb.method, dims=emb.dims, pixels=emb.pixels)
        with open(path + ".prov.txt", "w", encoding="ascii") as fh:
            fh.writelines(f"{key} = {items[key]!r}\n" for key in sorted(items))


def read_embedding(path, method=None):
    """Load a binary dump; the method tag comes from the sidecar when present."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise FormatError(f"{path} is not an embedding dump")
    d, N = struct.unpack("<II", buf[4:12])
    if len(buf) != 12 + 8 * d * N:
        raise FormatError(f"{path}: expected {12 + 8 * d * N} bytes, found {len(buf)}")
    Y = np.frombuffer(buf[12:], dtype="<f8").reshape(N, d).T.astype(np.float64)
    prov = {}
    try:
        with open(path + ".prov.txt", encoding="ascii") as fh:
            for line in fh:
                key, _, value = line.partition(" = ")
                prov[key.strip()] = value.strip()
    except FileNotFoundError:
        pass
    if method is None:
        method = prov.get("method", "'osf'").strip("'\"")
    return Embedding(Y, method, prov)
