"""Spatial 4-neighborhoods and exact spectral k-nearest-neighbor search."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError
from .utils import as_samples, check_positive_int

# (drow, dcol) in the fixed neighbor order: up, left, down, right
SPATIAL_OFFSETS = ((-1, 0), (0, -1), (1, 0), (0, 1))

_CHUNK_ELEMENTS = 1 << 23


def spatial_neighbors(index, height, width):
    """Linear indices of the 4-connected neighbors of ``index``, border-truncated."""
    n = height * width
    if not 0 <= index < n:
        raise ParameterError(f"pixel index {index} outside [0, {n})")
    row, col = divmod(int(index), width)
    out = []
    for dr, dc in SPATIAL_OFFSETS:
        r, c = row + dr, col + dc
        if 0 <= r < height and 0 <= c < width:
            out.append(r * width + c)
    return out


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """All 4-neighborhoods of an image, as an ``N x 4`` table padded with -1.

    Valid entries of each row come first, in up/left/down/right order.
    """

    neighbors: np.ndarray
    counts: np.ndarray
    height: int
    width: int

    def __getitem__(self, index):
        return self.neighbors[index, : self.counts[index]].tolist()


def spatial_grid(height, width):
    height = check_positive_int(height, "height")
    width = check_positive_int(width, "width")
    rows, cols = np.divmod(np.arange(height * width), width)
    table = np.full((height * width, 4), -1, dtype=np.int64)
    counts = np.zeros(height * width, dtype=np.int64)
    for dr, dc in SPATIAL_OFFSETS:
        r, c = rows + dr, cols + dc
        ok = (r >= 0) & (r < height) & (c >= 0) & (c < width)
        idx = np.flatnonzero(ok)
        table[idx, counts[idx]] = r[idx] * width + c[idx]
        counts[idx] += 1
    return SpatialGrid(table, counts, height, width)


@dataclass(frozen=True, eq=False)
class SpectralNeighborhood:
    """k nearest spectral neighbors of every pixel, sorted by (distance, index)."""

    indices: np.ndarray
    distances: np.ndarray

    @property
    def k(self):
        return self.indices.shape[1]

    def __len__(self):
        return self.indices.shape[0]

    def __getitem__(self, i):
        return list(zip(self.indices[i].tolist(), self.distances[i].tolist()))

    def to_text(self):
        lines = []
        for i in range(len(self)):
            pairs = " ".join(f"({j},{d!r})" for j, d in self[i])
            lines.append(f"{i}: {pairs}")
        return "\n".join(lines) + "\n"


def _exact_rows(queries, refs, ref_sq, k, query_ids):
    """k nearest refs of each query row; Gram-trick screening, exact refinement.

    The Gram identity only screens candidates.  Its rounding error is bounded
    by ``err``; every reference whose approximate distance lies within ``2 * err``
    of the approximate k-th value is re-measured by direct differencing, so the
    returned neighbors and distances equal an exhaustive search.
    """
    d = queries.shape[1]
    q_sq = np.einsum("ij,ij->i", queries, queries)
    approx = q_sq[:, None] + ref_sq[None, :] - 2.0 * (queries @ refs.T)
    eps = np.finfo(np.float64).eps
    err = 4.0 * (d + 4) * eps * (q_sq + ref_sq.max()) + np.finfo(np.float64).tiny
    if query_ids is not None:
        approx[np.arange(len(queries)), query_ids] = np.inf
    kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
    idx_out = np.empty((len(queries), k), dtype=np.int64)
    dist_out = np.empty((len(queries), k))
    for r in range(len(queries)):
        cand = np.flatnonzero(approx[r] <= kth[r] + 2.0 * err[r])
        diff = refs[cand] - queries[r]
        dist = np.sqrt((diff * diff).sum(axis=1))
        order = np.lexsort((cand, dist))[:k]
        idx_out[r] = cand[order]
        dist_out[r] = dist[order]
    return idx_out, dist_out


def exact_neighbors(queries, refs, k, exclude_self=False, n_jobs=None):
    """Exact k-NN of ``queries`` (rows) among ``refs`` (rows).

    Ties are broken by the smaller reference index.  With ``exclude_self``
    the queries must be the refs themselves and row i never returns i.
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    refs = np.ascontiguousarray(refs, dtype=np.float64)
    n_ref = refs.shape[0]
    available = n_ref - 1 if exclude_self else n_ref
    if k > available:
        raise ParameterError(f"k={k} neighbors requested but only {available} candidates")
    ref_sq = np.einsum("ij,ij->i", refs, refs)
    chunk = max(1, _CHUNK_ELEMENTS // max(n_ref, 1))
    starts = list(range(0, queries.shape[0], chunk))

    def work(s):
        ids = np.arange(s, min(s + chunk, queries.shape[0])) if exclude_self else None
        return _exact_rows(queries[s : s + chunk], refs, ref_sq, k, ids)

    if n_jobs and n_jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    if not parts:
        return np.empty((0, k), dtype=np.int64), np.empty((0, k))
    return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])


def spectral_knn(X, k=30, n_jobs=None):
    """Exact k nearest neighbors of every column of the ``D x N`` matrix ``X``."""
    S = as_samples(X)
    k = check_positive_int(k, "k")
    if k >= S.shape[0]:
        raise ParameterError(f"k={k} must be smaller than the pixel count {S.shape[0]}")
    idx, dist = exact_neighbors(S, S, k, exclude_self=True, n_jobs=n_jobs)
    return SpectralNeighborhood(idx, dist)
