"""Spatially coupled local reconstruction weights and the fused affinity matrix.

Every pixel i reconstructs the spectra of its patch (itself plus its spatial
4-neighbors) from the same set of k spectral neighbors of i.  Column j of the
local coefficient matrix W reconstructs patch position j; position 0 is the
center.  The coupling term

    || X_spe (m * w_0 - sum_{j>0} w_j) ||^2

(m = number of spatial neighbors actually present) ties the center weights to
the average of its neighbors' weights.  It is enforced by a quadratic penalty
whose weight grows geometrically until the term drops below ``eta``.

With Q = X_speᵀ X_spe = U diag(lam) Uᵀ and a = (m, -1, ..., -1), the penalized
normal equations

    (Q + r I) W - B + mu Q W a aᵀ = 0,    B = X_speᵀ T

decouple along â = a / |a|: the part of W orthogonal to â is the plain ridge
solution, and the â-component in the eigenbasis of Q is
c / (lam + r + mu |a|² lam) with c = Uᵀ B â.  One eigendecomposition per
pixel therefore serves every penalty round.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import ConsistencyError, NumericalError, ParameterError
from .graph import SpatialGrid, SpectralNeighborhood
from .utils import as_samples

DEFAULT_ETA = 1e-3
DEFAULT_RIDGE = 1e-3
_CHUNK = 512


@dataclass(frozen=True, eq=False)
class LocalWeights:
    """Solved coefficients for one pixel's patch.

    ``columns[:, 0]`` holds the center weights; ``columns[:, j]`` for j >= 1
    reconstructs ``positions[j]``.  ``raw`` keeps the solution before the
    unit-norm rescaling, and ``coupling_residual`` is evaluated on it.
    """

    pixel: int
    spectral_ids: np.ndarray
    positions: tuple
    columns: np.ndarray
    raw: np.ndarray
    coupling_residual: float
    penalty: float
    converged: bool

    @property
    def center(self):
        return self.columns[:, 0]


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Local weights of every pixel, stored as padded arrays.

    ``columns`` and ``raw`` are ``N x k x 5``; positions beyond a pixel's
    patch size (border pixels) are NaN.
    """

    spectral_ids: np.ndarray
    columns: np.ndarray
    raw: np.ndarray
    patch: np.ndarray
    coupling_residual: np.ndarray
    penalty: np.ndarray
    converged: np.ndarray
    eta: float = DEFAULT_ETA

    def __len__(self):
        return self.spectral_ids.shape[0]

    @property
    def k(self):
        return self.spectral_ids.shape[1]

    @property
    def center(self):
        return self.columns[:, :, 0]

    def __getitem__(self, i):
        size = int(np.count_nonzero(self.patch[i] >= 0))
        return LocalWeights(
            pixel=int(i),
            spectral_ids=self.spectral_ids[i],
            positions=tuple(self.patch[i, :size].tolist()),
            columns=self.columns[i, :, :size],
            raw=self.raw[i, :, :size],
            coupling_residual=float(self.coupling_residual[i]),
            penalty=float(self.penalty[i]),
            converged=bool(self.converged[i]),
        )

    def failures(self):
        """Pixels whose coupling residual stayed above ``eta``."""
        return np.flatnonzero(~self.converged)

    def summary(self):
        bad = self.failures()
        return {
            "pixels": len(self),
            "constraint_failures": int(bad.size),
            "max_coupling_residual": float(self.coupling_residual.max()) if len(self) else 0.0,
            "failed_pixels": bad[:20].tolist(),
        }

    @classmethod
    def from_center_weights(cls, spectral_ids, center):
        """Wrap hand-assigned center weights (no patch columns) for fusion tests."""
        spectral_ids = np.asarray(spectral_ids, dtype=np.int64)
        center = np.asarray(center, dtype=np.float64)
        n, k = spectral_ids.shape
        cols = np.full((n, k, 5), np.nan)
        cols[:, :, 0] = center
        patch = np.full((n, 5), -1, dtype=np.int64)
        patch[:, 0] = np.arange(n)
        return cls(spectral_ids, cols, cols.copy(), patch, np.zeros(n), np.zeros(n),
                   np.ones(n, dtype=bool))


def _penalties(start, factor, rounds):
    return start * factor ** np.arange(rounds)


def _solve_block(S, centers, targets, nbr, m, eta, ridge, schedule):
    """Solve the penalized problem for pixels sharing the same patch size.

    S: N x D samples; centers: (n,) pixel ids; targets: (n, m+1) pixel ids;
    nbr: (n, k) spectral neighbor ids.
    """
    n, k = nbr.shape
    Xs = S[nbr]                                      # n x k x D
    T = S[targets]                                   # n x P x D
    Q = Xs @ Xs.transpose(0, 2, 1)                   # n x k x k
    B = Xs @ T.transpose(0, 2, 1)                    # n x k x P

    diff = Xs - S[centers][:, None, :]
    scale = np.einsum("nkd,nkd->n", diff, diff)
    fallback = np.trace(Q, axis1=1, axis2=2)
    scale = np.where(scale > 0, scale, fallback)
    reg = ridge * scale / k

    lam, U = np.linalg.eigh(Q)
    lam = np.clip(lam, 0.0, None)
    if ridge == 0:
        tol = k * np.finfo(np.float64).eps * np.maximum(lam[:, -1], np.finfo(np.float64).tiny)
        if np.any(lam[:, 0] <= tol):
            bad = int(centers[np.argmax(lam[:, 0] <= tol)])
            raise NumericalError(
                f"local Gram matrix of pixel {bad} is singular; use a positive ridge"
            )
    Bt = U.transpose(0, 2, 1) @ B                    # rotated right-hand sides
    denom = lam + reg[:, None]

    P = m + 1
    a = np.full(P, -1.0)
    a[0] = m
    a_norm2 = float(a @ a)
    if m == 0:
        W = U @ (Bt / denom[:, :, None])
        resid = np.zeros(n)
        return W, resid, np.zeros(n), np.ones(n, dtype=bool)

    a_hat = a / np.sqrt(a_norm2)
    c = Bt @ a_hat                                   # n x k
    W_perp = (Bt - c[:, :, None] * a_hat[None, None, :]) / denom[:, :, None]

    chosen = np.full(n, -1)
    coef = np.empty((n, k))
    resid = np.empty(n)
    pending = np.arange(n)
    for t, mu in enumerate(schedule):
        ca = c[pending] / (denom[pending] + mu * a_norm2 * lam[pending])
        wa = np.einsum("nkj,nj->nk", U[pending], ca)
        v = np.einsum("nkd,nk->nd", Xs[pending], wa)
        r = a_norm2 * np.einsum("nd,nd->n", v, v)
        coef[pending] = ca
        resid[pending] = r
        chosen[pending] = t
        pending = pending[r > eta]
        if pending.size == 0:
            break
    converged = np.ones(n, dtype=bool)
    converged[pending] = False
    W = U @ (W_perp + coef[:, :, None] * a_hat[None, None, :])
    return W, resid, schedule[chosen], converged


def _normalize_columns(W):
    norms = np.linalg.norm(W, axis=1, keepdims=True)
    k = W.shape[1]
    out = np.where(norms > 0, W / np.where(norms > 0, norms, 1.0), 1.0 / np.sqrt(k))
    return out


def solve_all_weights(X, spatial, spectral, eta=DEFAULT_ETA, ridge=DEFAULT_RIDGE,
                      penalty_start=1.0, penalty_factor=10.0, max_rounds=10, n_jobs=None):
    """Solve the coupled local regression of every pixel.

    Parameters
    ----------
    X : ndarray, shape (D, N)
        Spectral matrix.
    spatial : SpatialGrid
    spectral : SpectralNeighborhood
    eta : float
        Tolerance on the coupling residual.
    ridge : float
        Relative Tikhonov factor; the absolute regularizer is
        ``ridge * trace(G) / k`` with G the Gram matrix of neighbor differences.
    penalty_start, penalty_factor, max_rounds : penalty schedule.

    Returns
    -------
    WeightSet
        Per-pixel results in linear-index order.  Pixels whose residual never
        reached ``eta`` are flagged in ``converged``; they are not an error.
    """
    S = as_samples(X)
    N = S.shape[0]
    if not isinstance(spatial, SpatialGrid) or spatial.neighbors.shape[0] != N:
        raise ConsistencyError("spatial grid does not match the pixel count")
    if not isinstance(spectral, SpectralNeighborhood) or len(spectral) != N:
        raise ConsistencyError("spectral neighborhood does not match the pixel count")
    if spectral.k < 2:
        raise ParameterError("at least 2 spectral neighbors are required")
    if not eta > 0:
        raise ParameterError("eta must be positive")
    if ridge < 0:
        raise ParameterError("ridge must be non-negative")
    if max_rounds < 1:
        raise ParameterError("max_rounds must be >= 1")
    schedule = _penalties(penalty_start, penalty_factor, max_rounds)
    k = spectral.k

    patch = np.full((N, 5), -1, dtype=np.int64)
    patch[:, 0] = np.arange(N)
    patch[:, 1:] = spatial.neighbors
    raw = np.full((N, k, 5), np.nan)
    resid = np.zeros(N)
    penalty = np.zeros(N)
    converged = np.ones(N, dtype=bool)

    jobs = []
    for m in np.unique(spatial.counts):
        ids = np.flatnonzero(spatial.counts == m)
        for s in range(0, ids.size, _CHUNK):
            jobs.append((int(m), ids[s : s + _CHUNK]))

    def work(job):
        m, ids = job
        return _solve_block(S, ids, patch[ids, : m + 1], spectral.indices[ids], m,
                            eta, ridge, schedule)

    if n_jobs and n_jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    for (m, ids), (W, r, mu, ok) in zip(jobs, results):
        raw[ids, :, : m + 1] = W
        resid[ids] = r
        penalty[ids] = mu
        converged[ids] = ok

    columns = np.full_like(raw, np.nan)
    valid = patch >= 0
    for m in np.unique(spatial.counts):
        ids = np.flatnonzero(spatial.counts == m)
        columns[ids, :, : m + 1] = _normalize_columns(raw[ids, :, : m + 1])
    assert np.array_equal(np.isnan(columns[:, 0, :]), ~valid)
    return WeightSet(spectral.indices.copy(), columns, raw, patch, resid, penalty, converged,
                     float(eta))


def solve_local_weights(X, i, spa, spe, eta=DEFAULT_ETA, ridge=DEFAULT_RIDGE,
                        penalty_start=1.0, penalty_factor=10.0, max_rounds=10):
    """Coupled regression for the single pixel ``i``.

    ``spa`` lists the spatial neighbors of i; ``spe`` is either a
    SpectralNeighborhood or the sequence of i's spectral neighbor indices.
    """
    S = as_samples(X)
    nbr = np.asarray(spe.indices[i] if isinstance(spe, SpectralNeighborhood) else spe,
                     dtype=np.int64)
    if nbr.ndim != 1 or nbr.size < 2:
        raise ParameterError("at least 2 spectral neighbors are required")
    if not eta > 0:
        raise ParameterError("eta must be positive")
    if ridge < 0:
        raise ParameterError("ridge must be non-negative")
    spa = [int(j) for j in spa]
    if len(spa) > 4:
        raise ParameterError("a 4-neighborhood has at most 4 members")
    for j in [i, *spa, *nbr.tolist()]:
        if not 0 <= j < S.shape[0]:
            raise ConsistencyError(f"pixel index {j} out of range")
    schedule = _penalties(penalty_start, penalty_factor, max_rounds)
    m = len(spa)
    W, r, mu, ok = _solve_block(S, np.array([i]), np.array([[i, *spa]]), nbr[None, :], m,
                                eta, ridge, schedule)
    return LocalWeights(
        pixel=int(i),
        spectral_ids=nbr,
        positions=(int(i), *spa),
        columns=_normalize_columns(W)[0],
        raw=W[0],
        coupling_residual=float(r[0]),
        penalty=float(mu[0]),
        converged=bool(ok[0]),
    )


def coupling_residual(X, local):
    """Evaluate the coupling term directly from a LocalWeights' raw columns."""
    S = as_samples(X)
    m = len(local.positions) - 1
    v = m * local.raw[:, 0] - local.raw[:, 1:].sum(axis=1)
    r = S[local.spectral_ids].T @ v
    return float(r @ r)


def build_affinity(weights, n=None, clamp=True):
    """Fuse center weights into a symmetric sparse affinity matrix.

    For each pair, ``a`` is the weight of k in i's patch and ``b`` the weight
    of i in k's patch (0 if absent); the entry is ``a + b - a*b``.  Pairs with
    ``a = b = 0`` are not stored.  ``clamp`` restricts weights to [0, 1] first.
    """
    ids = weights.spectral_ids
    N = len(weights) if n is None else int(n)
    if ids.shape[0] != N:
        raise ConsistencyError(f"weights cover {ids.shape[0]} pixels, expected {N}")
    if ids.size and (ids.min() < 0 or ids.max() >= N):
        raise ConsistencyError("a weight references a pixel outside [0, n)")
    if np.any(ids == np.arange(N)[:, None]):
        raise ConsistencyError("a pixel lists itself as a spectral neighbor")
    c = weights.center
    if clamp:
        c = np.clip(c, 0.0, 1.0)
    rows = np.repeat(np.arange(N), ids.shape[1])
    Wc = sp.csr_matrix((c.ravel(), (rows, ids.ravel())), shape=(N, N))
    pattern = (abs(Wc) + abs(Wc.T)).tocoo()
    if pattern.nnz == 0:
        return sp.csr_matrix((N, N))
    r, k = pattern.row, pattern.col
    a = np.asarray(Wc[r, k]).ravel()
    b = np.asarray(Wc[k, r]).ravel()
    # a + b - ab evaluated as hi + lo (1 - hi): the same value, but in floating
    # point it never drops below max(a, b) and stays symmetric bit for bit
    hi, lo = np.maximum(a, b), np.minimum(a, b)
    A = sp.csr_matrix((hi + lo * (1.0 - hi), (r, k)), shape=(N, N))
    A.eliminate_zeros()
    A.sort_indices()
    return A


def affinity_to_text(A):
    """Coordinate dump ``i k value`` with i < k, sorted by (i, k)."""
    U = sp.triu(A, k=1).tocoo()
    order = np.lexsort((U.col, U.row))
    return "".join(f"{U.row[o]} {U.col[o]} {float(U.data[o])!r}\n" for o in order)
