import json

import numpy as np
import oracles
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ssme.datacube import LabelMap, load_labels
from ssme.evaluation import (
    INDIAN_PINES_CONVENTIONAL,
    INDIAN_PINES_TABLE,
    Split,
    SplitSpec,
    classify_nn,
    compute_metrics,
    confusion_matrix,
    indian_pines_spec,
    kappa_score,
    make_split,
    metrics_from_confusion,
    name_key,
    read_class_names,
    render_class_map,
    table_class_names,
    uniform_spec,
    write_class_map,
)
from ssme.exceptions import ConsistencyError, ParameterError


def test_table_totals():
    assert sum(r[1] for r in INDIAN_PINES_TABLE) == 695
    assert sum(r[2] for r in INDIAN_PINES_TABLE) == 9671
    assert INDIAN_PINES_TABLE[0] == ("CornNotill", 50, 1384)
    assert len(INDIAN_PINES_TABLE) == 16


def test_conventional_names_map_onto_table():
    spec = indian_pines_spec(INDIAN_PINES_CONVENTIONAL)
    assert spec.counts[1] == 15            # Alfalfa
    assert spec.counts[2] == 50            # Corn-notill
    assert spec.counts[15] == 50           # Buildings-Grass-Trees-Drives
    assert sum(spec.counts.values()) == 695
    assert indian_pines_spec(table_class_names()).counts[14] == 15


def test_protocol_names_are_validated():
    names = dict(INDIAN_PINES_CONVENTIONAL)
    names[3] = "Rice"
    with pytest.raises(ParameterError, match="Rice"):
        indian_pines_spec(names)
    names = dict(INDIAN_PINES_CONVENTIONAL)
    del names[16]
    with pytest.raises(ParameterError):
        indian_pines_spec(names)
    assert name_key("Grass-pasture-mowed") == "grasspasturemowed"


def _protocol_labels():
    """Label raster whose per-class sizes equal the published train+test totals."""
    sizes = {name_key(n): tr + te for n, tr, te in INDIAN_PINES_TABLE}
    ids = []
    for cid, name in INDIAN_PINES_CONVENTIONAL.items():
        ids += [cid] * sizes[name_key(name)]
    flat = np.zeros(145 * 145, dtype=np.int64)
    flat[: len(ids)] = np.random.default_rng(0).permutation(ids)
    return LabelMap(flat.reshape(145, 145))


def test_protocol_split_totals():
    labels = _protocol_labels()
    split = make_split(labels, indian_pines_spec(INDIAN_PINES_CONVENTIONAL, seed=3))
    assert split.train_idx.size == 695
    assert split.test_idx.size == 9671
    assert np.sum(split.test_lab == 2) == 1384      # Corn-notill


def test_toy_split_deterministic_and_disjoint():
    labels = LabelMap(np.array([[1] * 10 + [2] * 10 + [0] * 4]))
    spec = SplitSpec({1: 3, 2: 3}, seed=11)
    a, b = make_split(labels, spec), make_split(labels, spec)
    assert a.train == b.train and a.test == b.test
    train, test = set(a.train_idx.tolist()), set(a.test_idx.tolist())
    assert not train & test
    assert train | test == set(range(20))
    assert np.bincount(a.train_lab).tolist() == [0, 3, 3]
    assert make_split(labels, SplitSpec({1: 3, 2: 3}, seed=12)).train != a.train


def test_unsatisfiable_split():
    labels = LabelMap(np.array([[1, 1, 2]]))
    with pytest.raises(ParameterError, match="class 2 needs 2.*only 1"):
        make_split(labels, SplitSpec({1: 1, 2: 2}))
    with pytest.raises(ParameterError):
        make_split(labels, SplitSpec({1: 1}))
    with pytest.raises(ParameterError):
        SplitSpec({1: 0})


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.integers(0, 3)),
       st.integers(0, 1000))
def test_split_property(raster, seed):
    present = sorted(set(np.unique(raster).tolist()) - {0})
    raster = np.searchsorted([0] + present, raster)         # make ids contiguous
    labels = LabelMap(raster)
    hist = labels.histogram()
    spec = SplitSpec({c: max(1, hist[c] // 2) for c in range(1, labels.n_classes + 1)}, seed)
    split = make_split(labels, spec)
    assert not set(split.train_idx.tolist()) & set(split.test_idx.tolist())
    assert sorted(split.train_idx.tolist() + split.test_idx.tolist()) == \
        np.flatnonzero(labels.flat()).tolist()
    for c, n in spec.counts.items():
        assert np.sum(split.train_lab == c) == n


def _split(train, train_lab, test, test_lab):
    return Split(np.array(train), np.array(train_lab), np.array(test), np.array(test_lab))


def test_single_training_pixel():
    Y = np.random.default_rng(0).normal(size=(2, 6))
    split = _split([2], [4], [0, 1, 3, 4, 5], [1, 2, 3, 4, 4])
    assert classify_nn(Y, split).tolist() == [4] * 5


def test_coincident_test_pixel():
    Y = np.array([[0.0, 5.0, 0.0, 9.0]])
    split = _split([0, 1], [1, 2], [2, 3], [1, 2])
    assert classify_nn(Y, split).tolist() == [1, 2]


def test_equidistant_goes_to_earlier_training_pixel():
    Y = np.array([[-1.0, 1.0, 0.0]])
    split = _split([0, 1], [2, 1], [2], [1])
    assert classify_nn(Y, split).tolist() == [2]


def test_random_embedding_matches_brute_force():
    rng = np.random.default_rng(15)
    Y = rng.normal(size=(2, 45))
    idx = rng.permutation(45)
    train, test = np.sort(idx[:15]), np.sort(idx[15:])
    lab = rng.integers(1, 4, size=45)
    split = _split(train, lab[train], test, lab[test])
    pred = classify_nn(Y, split)
    for p, t in zip(pred, test):
        d = [np.sqrt(np.sum((Y[:, t] - Y[:, j]) ** 2)) for j in train]
        assert p == lab[train[int(np.argmin(d))]]


def test_rotation_invariance():
    rng = np.random.default_rng(21)
    Y = rng.normal(size=(5, 80))
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    idx = rng.permutation(80)
    lab = rng.integers(1, 5, size=80)
    train, test = np.sort(idx[:20]), np.sort(idx[20:])
    split = _split(train, lab[train], test, lab[test])
    np.testing.assert_array_equal(classify_nn(Y, split), classify_nn(Q @ Y, split))


def test_classify_errors():
    Y = np.zeros((2, 3))
    with pytest.raises(ParameterError):
        classify_nn(Y, _split([], [], [0], [1]))
    with pytest.raises(ConsistencyError):
        classify_nn(Y, _split([0], [1], [5], [1]))


def test_perfect_prediction():
    split = _split([0], [1], [1, 2, 3], [1, 2, 2])
    rep = compute_metrics(np.array([1, 2, 2]), split, 2)
    assert (rep.oa, rep.aa, rep.kappa) == (1.0, 1.0, 1.0)


def test_hand_built_confusion():
    conf = np.array([[5, 1, 0], [0, 4, 2], [1, 0, 7]])
    rep = metrics_from_confusion(conf)
    # row sums 6, 6, 8; column sums 6, 5, 9; total 20
    po = 16 / 20
    pe = (6 * 6 + 6 * 5 + 8 * 9) / 400
    assert rep.oa == pytest.approx(0.8, abs=1e-15)
    assert rep.aa == pytest.approx((5 / 6 + 4 / 6 + 7 / 8) / 3, abs=1e-15)
    assert rep.kappa == pytest.approx((po - pe) / (1 - pe), abs=1e-15)
    assert rep.kappa == pytest.approx(91 / 131, abs=1e-15)
    np.testing.assert_allclose(rep.per_class, [5 / 6, 4 / 6, 7 / 8])


def test_reference_row_schema():
    rep = metrics_from_confusion(np.eye(3, dtype=int) * 4)
    d = json.loads(rep.to_json("ssme", {"dims": 16}))
    assert set(d) == {"method", "params", "oa", "aa", "kappa", "per_class", "confusion"}
    assert d["params"] == {"dims": 16}


def test_single_class_everywhere_gives_unit_kappa():
    rep = metrics_from_confusion(np.array([[9, 0], [0, 0]]))
    assert (rep.oa, rep.kappa) == (1.0, 1.0)
    rep = metrics_from_confusion(np.array([[7]]))
    assert (rep.oa, rep.kappa) == (1.0, 1.0)


def test_guarded_kappa():
    assert kappa_score(1.0, 1.0) == 1.0
    assert kappa_score(0.5, 1.0) == 0.0
    assert kappa_score(0.8, 0.36) == pytest.approx((0.8 - 0.36) / 0.64, abs=1e-15)


def test_disjoint_truth_and_prediction_classes():
    # every truth class 1, every prediction class 2: p_e = 0
    rep = metrics_from_confusion(np.array([[0, 9], [0, 0]]))
    assert (rep.oa, rep.kappa) == (0.0, 0.0)


def test_class_without_test_samples_is_excluded_from_aa():
    rep = metrics_from_confusion(np.array([[3, 1, 0], [0, 0, 0], [0, 0, 2]]))
    assert np.isnan(rep.per_class[1])
    assert rep.aa == pytest.approx((0.75 + 1.0) / 2)
    assert json.loads(rep.to_json())["per_class"][1] is None


@settings(max_examples=100, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 6)).map(lambda t: (t[0], t[0])),
              elements=st.integers(0, 50)))
def test_metrics_match_exact_oracle(conf):
    if conf.sum() == 0:
        with pytest.raises(ParameterError):
            metrics_from_confusion(conf)
        return
    rep = metrics_from_confusion(conf)
    oa, aa, kappa = oracles.metrics_exact(conf)
    assert abs(rep.oa - oa) <= 1e-12
    assert abs(rep.aa - aa) <= 1e-12
    assert abs(rep.kappa - kappa) <= 1e-12
    assert 0 <= rep.oa <= 1 and 0 <= rep.aa <= 1 and -1 <= rep.kappa <= 1
    np.testing.assert_array_equal(rep.confusion.sum(axis=1), conf.sum(axis=1))


def test_confusion_orientation():
    conf = confusion_matrix([1, 1, 2], [2, 1, 2], 2)
    assert conf.tolist() == [[1, 1], [0, 1]]
    with pytest.raises(ConsistencyError):
        confusion_matrix([3], [1], 2)


def test_prediction_mapping_validation():
    split = _split([0], [1], [1, 2], [1, 2])
    rep = compute_metrics({1: 1, 2: 1}, split, 2)
    assert rep.confusion.tolist() == [[1, 0], [1, 0]]
    with pytest.raises(ConsistencyError):
        compute_metrics({1: 1, 2: 1, 0: 1}, split, 2)
    with pytest.raises(ConsistencyError):
        compute_metrics({1: 1}, split, 2)
    with pytest.raises(ConsistencyError):
        compute_metrics(np.array([1]), split, 2)


def test_class_map_all_background():
    labels = LabelMap(np.zeros((3, 3), dtype=int))
    empty = np.empty(0, dtype=np.int64)
    raster = render_class_map(empty, Split(empty, empty, empty, empty), labels)
    assert np.all(raster == 0)


def test_class_map_single_prediction():
    labels = LabelMap(np.array([[0, 1], [5, 2], [3, 4]]))
    split = _split([1, 3, 4, 5], [1, 2, 3, 4], [2], [5])
    raster = render_class_map(np.array([5]), split, labels)
    assert raster[1, 0] == 5


def test_class_map_join_on_scene(small_scene, tmp_path):
    cube, labels = small_scene
    split = make_split(labels, uniform_spec(labels, 4, seed=2))
    pred = classify_nn(cube.data.reshape(cube.bands, -1), split)
    raster = render_class_map(pred, split, labels).ravel()
    lookup = dict(zip(split.test_idx.tolist(), pred.tolist()))
    lookup.update(zip(split.train_idx.tolist(), split.train_lab.tolist()))
    for n in range(raster.size):
        assert raster[n] == lookup.get(n, 0)
    pgm, legend = write_class_map(str(tmp_path / "map"), raster.reshape(labels.shape),
                                  {1: "Woods", 2: "Oats"})
    np.testing.assert_array_equal(load_labels(pgm).flat(), raster)
    assert read_class_names(legend) == {1: "Woods", 2: "Oats", 3: "Class 3"}
