"""Smallest eigenpairs of symmetric matrices, optionally off a known direction.

Small problems are diagonalized densely.  Large sparse problems go through
ARPACK in shift-invert mode; the deflated operator P M P + c u uᵀ differs
from M by a rank-2 term, so its shifted inverse is applied with one sparse
LU factorization of M plus a Woodbury correction.
"""
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import EigenError, ParameterError

DENSE_LIMIT = 5000
RESIDUAL_TOL = 1e-10
CLUSTER_GAP = 1e-9


def fix_signs(vectors):
    """Flip each column so its largest-magnitude entry is positive.

    Among entries of equal magnitude the lowest index decides.  Returns the
    flipped vectors and the index of each column's deciding entry.
    """
    V = np.array(vectors, dtype=np.float64, copy=True)
    if V.size == 0:
        return V, np.zeros(V.shape[1] if V.ndim == 2 else 0, dtype=np.int64)
    pivot = np.argmax(np.abs(V), axis=0)
    cols = np.arange(V.shape[1])
    V[:, V[pivot, cols] < 0] *= -1.0
    return V, pivot


def _order_clusters(vals, V, pivot):
    """Within runs of eigenvalues closer than CLUSTER_GAP, sort by pivot index."""
    order = np.arange(vals.size)
    start = 0
    for i in range(1, vals.size + 1):
        if i == vals.size or vals[i] - vals[i - 1] >= CLUSTER_GAP:
            if i - start > 1:
                block = order[start:i]
                order[start:i] = block[np.argsort(pivot[block], kind="stable")]
            start = i
    return vals[order], V[:, order]


def _unit(u, n):
    u = np.ones(n) if u is True else np.asarray(u, dtype=np.float64).ravel()
    if u.shape != (n,):
        raise ParameterError(f"deflation vector has length {u.size}, expected {n}")
    nrm = np.linalg.norm(u)
    if nrm == 0:
        raise ParameterError("deflation vector is zero")
    return u / nrm


def _dense(M, count, u):
    M = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=np.float64)
    if u is None:
        vals, V = sla.eigh(M, subset_by_index=[0, count - 1])
        return vals, V
    # Householder reflector H with H u = ±e1; columns 1.. of H span u's complement
    h = u.copy()
    h[0] += np.copysign(1.0, u[0])
    h /= np.linalg.norm(h)
    MH = M - 2.0 * np.outer(M @ h, h)
    HMH = MH - 2.0 * np.outer(h, h @ MH)
    sub = HMH[1:, 1:]
    sub = 0.5 * (sub + sub.T)
    vals, Z = sla.eigh(sub, subset_by_index=[0, count - 1])
    full = np.vstack([np.zeros((1, count)), Z])
    V = full - 2.0 * np.outer(h, h @ full)
    return vals, V


def _iterative(M, count, u, tol):
    M = sp.csc_matrix(M, dtype=np.float64)
    n = M.shape[0]
    bound = float(abs(M).sum(axis=1).max())
    shift = -1e-6 * max(bound, 1.0)
    K = (M - shift * sp.identity(n, format="csc")).tocsc()
    lu = spla.splu(K)

    if u is None:
        op = spla.LinearOperator((n, n), matvec=lambda x: M @ x, dtype=np.float64)
        inv = spla.LinearOperator((n, n), matvec=lambda x: lu.solve(np.ravel(x)),
                                  dtype=np.float64)
    else:
        g = M @ u
        alpha = float(u @ g)
        big = bound + 1.0

        def matvec(x):
            x = np.ravel(x)
            ux = u @ x
            y = M @ x - u * (g @ x) - g * ux + (alpha + big) * u * ux
            return y

        # B - shift I = K + Uw C Uwᵀ with Uw = [u, g]
        Uw = np.column_stack([u, g])
        C = np.array([[alpha + big, -1.0], [-1.0, 0.0]])
        KiU = np.column_stack([lu.solve(Uw[:, 0]), lu.solve(Uw[:, 1])])
        core = np.linalg.inv(np.linalg.inv(C) + Uw.T @ KiU)

        def solve(x):
            x = np.ravel(x)
            y = lu.solve(x)
            return y - KiU @ (core @ (Uw.T @ y))

        op = spla.LinearOperator((n, n), matvec=matvec, dtype=np.float64)
        inv = spla.LinearOperator((n, n), matvec=solve, dtype=np.float64)

    v0 = np.ones(n) / np.sqrt(n) + np.sin(np.arange(n))  # fixed start for reproducibility
    try:
        vals, V = spla.eigsh(op, k=count, sigma=shift, OPinv=inv, which="LM", tol=tol,
                             v0=v0, maxiter=max(1000, 20 * n))
    except spla.ArpackNoConvergence as exc:
        res = [float(np.linalg.norm(op @ exc.eigenvectors[:, j] - exc.eigenvalues[j]
                                    * exc.eigenvectors[:, j]))
               for j in range(len(exc.eigenvalues))]
        raise EigenError(f"eigen-solver did not converge for {count} pairs", res) from exc
    order = np.argsort(vals)
    vals, V = vals[order], V[:, order]
    V, _ = np.linalg.qr(V)
    res = np.linalg.norm(op @ V - V * vals, axis=0)
    scale = max(bound, 1.0)
    if np.any(res > 1e-6 * scale):
        raise EigenError("eigen residuals exceed tolerance", res.tolist())
    return vals, V


def eigen_smallest(M, count, deflate_ones=False, dense_limit=DENSE_LIMIT, tol=RESIDUAL_TOL):
    """The ``count`` smallest eigenpairs of the symmetric matrix ``M``.

    Parameters
    ----------
    M : ndarray or sparse matrix, shape (n, n)
    count : int
    deflate_ones : bool or array_like
        True restricts the search to the complement of the all-ones vector;
        an array restricts it to the complement of that vector.
    dense_limit : int
        Problems up to this size use dense diagonalization.

    Returns
    -------
    values : ndarray, ascending
    vectors : ndarray, shape (n, count), orthonormal columns with the sign
        convention of :func:`fix_signs`.
    """
    if not sp.issparse(M):
        M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ParameterError(f"matrix must be square, got {M.shape}")
    n = M.shape[0]
    asym = abs(M - M.T).max() if sp.issparse(M) else np.max(np.abs(M - M.T))
    if asym > 1e-10:
        raise ParameterError(f"matrix is not symmetric (max deviation {asym:.3g})")
    u = None
    if deflate_ones is not False and deflate_ones is not None:
        u = _unit(deflate_ones, n)
    if isinstance(count, bool) or not isinstance(count, (int, np.integer)) or not 1 <= count < n:
        raise ParameterError(f"cannot extract {count} eigenpairs from a {n}x{n} problem")
    if n <= dense_limit:
        vals, V = _dense(M, count, u)
    else:
        vals, V = _iterative(M, count, u, tol)
    V, pivot = fix_signs(V)
    return _order_clusters(vals, V, pivot)
