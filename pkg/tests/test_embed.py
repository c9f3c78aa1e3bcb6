import warnings

import numpy as np
import oracles
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from ssme import synth_cube
from ssme.datacube import flatten
from ssme.embed import (
    Embedding,
    embed_le,
    embed_lle,
    embed_osf,
    embed_pca,
    embed_ssme,
    heat_kernel_graph,
    laplacian,
    lle_weights,
    normalize_embedding,
    read_embedding,
    write_embedding,
)
from ssme.exceptions import FormatError, NumericalError, ParameterError
from ssme.graph import spatial_grid, spectral_knn
from ssme.weights import build_affinity, solve_all_weights


def _within_constraints(emb):
    s, c = emb.constraint_errors()
    return s <= 1e-8 * np.sqrt(emb.pixels * emb.dims) and c <= 1e-6


def _scene_affinity(h=8, w=8, classes=3, bands=10, k=8, seed=0):
    cube, _labels = synth_cube(h, w, classes, bands, 0.05, seed)
    X = flatten(cube)
    ws = solve_all_weights(X, spatial_grid(h, w), spectral_knn(X, k))
    return X, build_affinity(ws)


def _objective(A, Y):
    R = Y - Y @ A.T
    return float(np.sum(R * R))


def test_chain_affinity_matches_dense_minimizer():
    A = sp.csr_matrix(np.array([[0, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0]]))
    emb = embed_ssme(A, 1, affinity_scaling=None)
    IA = np.eye(3) - A.toarray()
    _, V = oracles.complement_eigvecs(IA.T @ IA, 1)
    ref = oracles.whiten(V)
    assert oracles.match_up_to_sign(emb.Y, ref) < 1e-12
    assert _within_constraints(emb)


def test_scaled_affinity_matches_oracle():
    _X, A = _scene_affinity()
    emb = embed_ssme(A, 4)
    s = A.sum() / A.shape[0]
    assert emb.provenance["affinity_scale"] == pytest.approx(s)
    IA = np.eye(A.shape[0]) - A.toarray() / s
    _, V = oracles.complement_eigvecs(IA.T @ IA, 4)
    assert oracles.match_up_to_sign(emb.Y, oracles.whiten(V)) < 1e-8


def test_table_dimension_defaults():
    import inspect

    assert inspect.signature(embed_ssme).parameters["d"].default == 16
    assert inspect.signature(embed_lle).parameters["d"].default == 60
    assert inspect.signature(embed_le).parameters["d"].default == 60
    assert inspect.signature(embed_pca).parameters["d"].default == 30


@pytest.mark.parametrize("scaling", [None, "mean_row_sum"])
@pytest.mark.parametrize("seed", range(4))
def test_objective_not_beaten_by_random_feasible(seed, scaling):
    """N = 12: the returned Y minimizes the objective over feasible Y."""
    rng = np.random.default_rng(seed)
    _X, A = _scene_affinity(3, 4, 2, 6, 5, seed)
    d = 2
    emb = embed_ssme(A, d, affinity_scaling=scaling)
    As = A / (A.sum() / 12) if scaling else A
    best = _objective(As, emb.Y)
    N = 12
    for _ in range(1000):
        Z = rng.normal(size=(N, d))
        Y = normalize_embedding(Z)
        assert _objective(As, Y) >= best - 1e-9


def test_ssme_dimension_errors():
    _, A = _scene_affinity()
    with pytest.raises(ParameterError):
        embed_ssme(A, 64)
    with pytest.raises(ParameterError):
        embed_ssme(A, 0)
    with pytest.raises(ParameterError):
        embed_ssme(A, 2, affinity_scaling="max")


def test_constraints_iterative_path():
    _, A = _scene_affinity(12, 12, 3, 10, 8)
    emb = embed_ssme(A, 6, dense_limit=50)
    ref = embed_ssme(A, 6)
    assert _within_constraints(emb)
    assert oracles.match_up_to_sign(emb.Y, ref.Y) < 1e-6


def test_lle_weights_sum_to_one(rng):
    S = rng.normal(size=(40, 6))
    nb = spectral_knn(S.T, 5)
    W = lle_weights(S, nb.indices)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-10)


def test_lle_swiss_roll_matches_oracle():
    t = np.linspace(1.5 * np.pi, 3 * np.pi, 10)
    S = np.column_stack([t * np.cos(t), np.linspace(0, 2, 10) ** 2, t * np.sin(t)])
    emb = embed_lle(S.T, k=4, d=2)
    ref, vals = oracles.lle_pipeline(S, 4, 2)
    assert oracles.match_up_to_sign(emb.Y, ref) < 1e-8
    np.testing.assert_allclose(emb.eigenvalues, vals, atol=1e-12)
    assert _within_constraints(emb)


def test_le_eight_points_match_generalized_oracle():
    rng = np.random.default_rng(8)
    S = rng.normal(size=(8, 3))
    emb = embed_le(S.T, k=3, d=3)
    ref, vals = oracles.le_pipeline(S, 3, 3)
    np.testing.assert_allclose(emb.eigenvalues, vals, atol=1e-8)
    assert oracles.match_up_to_sign(emb.Y, ref) < 1e-8


def test_le_two_components():
    S = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0]])
    nb = spectral_knn(S.T, 1)
    W, _ = heat_kernel_graph(nb, 1.0)
    L, _ = laplacian(W)
    vals = np.linalg.eigvalsh(L.toarray())
    assert np.sum(np.abs(vals) < 1e-12) == 2
    with pytest.warns(RuntimeWarning, match="2 connected components"):
        embed_le(S.T, k=1, d=2)


def test_le_sigma_options(rng):
    S = rng.normal(size=(30, 4))
    auto = embed_le(S.T, 5, 2)
    nb = spectral_knn(S.T, 5)
    assert auto.provenance["sigma"] == pytest.approx(nb.distances.mean())
    fixed = embed_le(S.T, 5, 2, sigma=0.7)
    assert fixed.provenance["sigma"] == 0.7
    with pytest.raises(ParameterError):
        embed_le(S.T, 5, 2, sigma=-1.0)


def test_precomputed_neighbors_must_match(rng):
    S = rng.normal(size=(30, 4))
    nb = spectral_knn(S.T, 5)
    a = embed_lle(S.T, 5, 3, neighbors=nb)
    b = embed_lle(S.T, 5, 3)
    assert a.Y.tobytes() == b.Y.tobytes()
    with pytest.raises(ParameterError):
        embed_le(S.T, 6, 3, neighbors=nb)


def test_pca_line_single_component():
    t = np.linspace(-1, 1, 25)
    X = np.vstack([2 * t + 1, -t + 3])
    emb = embed_pca(X, 2)
    ratio = emb.provenance["explained_variance_ratio"]
    assert ratio[0] == pytest.approx(1.0, abs=1e-12)
    assert ratio[1] == pytest.approx(0.0, abs=1e-12)


def test_pca_matches_covariance_oracle():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(6, 20))
    emb = embed_pca(X, 4)
    assert oracles.match_up_to_sign(emb.Y, oracles.pca_pipeline(X.T, 4)) < 1e-10
    with pytest.raises(ParameterError):
        embed_pca(X, 7)


def test_osf_identity_and_flatten_round_trip(rng):
    cube, _ = synth_cube(5, 4, 2, 7, 0.1, seed=1)
    X = flatten(cube)
    emb = embed_osf(X)
    assert emb.Y.tobytes() == np.ascontiguousarray(X).tobytes()
    assert emb.dims == 7 and emb.method == "osf"
    assert np.array_equal(emb.Y.reshape(7, 5, 4), cube.data)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["ssme", "lle", "le"]))
def test_constraint_suite_any_input(seed, method):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
    D = int(rng.integers(3, 9))
    X = rng.uniform(size=(D, h * w))
    k = int(rng.integers(2, min(8, h * w - 1)))
    d = int(rng.integers(1, 4))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if method == "ssme":
            ws = solve_all_weights(X, spatial_grid(h, w), spectral_knn(X, k))
            emb = embed_ssme(build_affinity(ws), d)
        elif method == "lle":
            emb = embed_lle(X, k, d)
        else:
            emb = embed_le(X, k, d)
    assert _within_constraints(emb)
    assert np.all(np.isfinite(emb.Y))


def test_normalize_rejects_dependent_columns():
    V = np.ones((10, 2))
    with pytest.raises(NumericalError):
        normalize_embedding(V)


def test_embedding_validation():
    with pytest.raises(ParameterError):
        Embedding(np.zeros((2, 3)), "tsne")
    with pytest.raises(NumericalError):
        Embedding(np.array([[np.nan]]), "osf")


def test_dump_round_trip(tmp_path, rng):
    emb = Embedding(rng.normal(size=(3, 7)), "lle", {"k": 4, "ridge": 1e-3})
    path = str(tmp_path / "e.ssme")
    write_embedding(path, emb)
    raw = (tmp_path / "e.ssme").read_bytes()
    assert raw[:4] == b"SSME"
    assert int.from_bytes(raw[4:8], "little") == 3
    assert int.from_bytes(raw[8:12], "little") == 7
    first_column = np.frombuffer(raw[12:36], dtype="<f8")
    np.testing.assert_array_equal(first_column, emb.Y[:, 0])
    back = read_embedding(path)
    assert back.method == "lle"
    assert back.Y.tobytes() == emb.Y.tobytes()
    sidecar = (tmp_path / "e.ssme.prov.txt").read_text()
    assert "k = 4" in sidecar and "ridge = 0.001" in sidecar


def test_dump_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(FormatError):
        read_embedding(str(tmp_path / "bad"))
    (tmp_path / "short").write_bytes(b"SSME" + (2).to_bytes(4, "little") * 2 + bytes(8))
    with pytest.raises(FormatError):
        read_embedding(str(tmp_path / "short"))
