"""Fixed-count splits, 1-NN classification in embedding space, OA/AA/kappa."""
import json
import re
from dataclasses import dataclass

import numpy as np

from .datacube import write_pgm
from .exceptions import ConsistencyError, ParameterError
from .graph import exact_neighbors
from .utils import rng_stream

# (class name, training samples, test samples) in the order of the published
# Indian Pines protocol table
INDIAN_PINES_TABLE = (
    ("CornNotill", 50, 1384),
    ("CornMintill", 50, 784),
    ("Corn", 50, 184),
    ("GrassPasture", 50, 447),
    ("GrassTrees", 50, 697),
    ("HayWindrowed", 50, 439),
    ("SoybeanNotill", 50, 918),
    ("SoybeanMintill", 50, 2418),
    ("SoybeanClean", 50, 564),
    ("Wheat", 50, 162),
    ("Woods", 50, 1244),
    ("BuildingsGrassTrees", 50, 330),
    ("StoneSteelTowers", 50, 45),
    ("Alfalfa", 15, 39),
    ("GrassPastureMowed", 15, 11),
    ("Oats", 15, 5),
)

# id -> name of the widely distributed ground-truth raster
INDIAN_PINES_CONVENTIONAL = {
    1: "Alfalfa", 2: "Corn-notill", 3: "Corn-mintill", 4: "Corn", 5: "Grass-pasture",
    6: "Grass-trees", 7: "Grass-pasture-mowed", 8: "Hay-windrowed", 9: "Oats",
    10: "Soybean-notill", 11: "Soybean-mintill", 12: "Soybean-clean", 13: "Wheat",
    14: "Woods", 15: "Buildings-Grass-Trees-Drives", 16: "Stone-Steel-Towers",
}

_ALIASES = {"buildingsgrasstreesdrives": "buildingsgrasstrees"}


def name_key(name):
    key = re.sub(r"[^a-z0-9]", "", name.lower())
    return _ALIASES.get(key, key)


def table_class_names():
    """id -> name using the table's own class numbering."""
    return {i: row[0] for i, row in enumerate(INDIAN_PINES_TABLE, start=1)}


@dataclass(frozen=True)
class SplitSpec:
    counts: dict
    seed: int = 0

    def __post_init__(self):
        for c, n in self.counts.items():
            if int(n) < 1:
                raise ParameterError(f"training count for class {c} must be positive")


def uniform_spec(labels, per_class, seed=0):
    return SplitSpec({c: int(per_class) for c in range(1, labels.n_classes + 1)}, seed)


def indian_pines_spec(class_names, seed=0):
    """Training counts of the published protocol, matched to ``class_names`` by name.

    ``class_names`` maps the raster's class ids to names; matching by name
    keeps a differently numbered ground truth from being silently permuted.
    """
    by_key = {name_key(name): train for name, train, _ in INDIAN_PINES_TABLE}
    counts = {}
    for cid, name in class_names.items():
        key = name_key(name)
        if key not in by_key:
            raise ParameterError(f"class {cid} ({name!r}) is not part of the protocol table")
        counts[int(cid)] = by_key[key]
    if len(counts) != len(INDIAN_PINES_TABLE) or len(set(map(name_key, class_names.values()))) != len(counts):
        raise ParameterError("class names do not cover the 16 protocol classes exactly once")
    return SplitSpec(counts, seed)


@dataclass(frozen=True, eq=False)
class Split:
    """Train/test pixel indices (ascending) with their class ids."""

    train_idx: np.ndarray
    train_lab: np.ndarray
    test_idx: np.ndarray
    test_lab: np.ndarray
    seed: int = 0

    @property
    def train(self):
        return list(zip(self.train_idx.tolist(), self.train_lab.tolist()))

    @property
    def test(self):
        return list(zip(self.test_idx.tolist(), self.test_lab.tolist()))


def make_split(labels, spec):
    """Sample ``spec.counts[c]`` training pixels per class; the rest are test pixels."""
    lab = labels.flat()
    present = set(np.unique(lab).tolist()) - {0}
    missing = present - set(spec.counts)
    if missing:
        raise ParameterError(f"split spec has no training count for classes {sorted(missing)}")
    rng = rng_stream(spec.seed, "split")
    train = []
    for c in sorted(spec.counts):
        idx = np.flatnonzero(lab == c)
        want = int(spec.counts[c])
        if want > idx.size:
            raise ParameterError(
                f"class {c} needs {want} training pixels but only {idx.size} are labeled"
            )
        train.append(rng.choice(idx, size=want, replace=False))
    train_idx = np.sort(np.concatenate(train)) if train else np.empty(0, dtype=np.int64)
    labeled = np.flatnonzero(lab > 0)
    test_idx = np.setdiff1d(labeled, train_idx)
    return Split(train_idx, lab[train_idx], test_idx, lab[test_idx], spec.seed)


def _embedding_samples(Y):
    Y = getattr(Y, "Y", Y)
    return np.ascontiguousarray(np.asarray(Y, dtype=np.float64).T)


def classify_nn(Y, split, n_jobs=None):
    """Label each test pixel with the class of its nearest training pixel.

    Returns predictions aligned with ``split.test_idx``.
    """
    if split.train_idx.size == 0:
        raise ParameterError("training set is empty")
    S = _embedding_samples(Y)
    if split.test_idx.size == 0:
        return np.empty(0, dtype=np.int64)
    hi = max(split.train_idx.max(), split.test_idx.max())
    if hi >= S.shape[0]:
        raise ConsistencyError(f"split references pixel {hi} but the embedding has {S.shape[0]}")
    nn, _ = exact_neighbors(S[split.test_idx], S[split.train_idx], 1, n_jobs=n_jobs)
    return split.train_lab[nn[:, 0]]


def confusion_matrix(y_true, y_pred, n_classes):
    """Counts with rows = truth, columns = prediction, for ids 1..n_classes."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 1 or arr.max() > n_classes):
            raise ConsistencyError(f"class id outside 1..{n_classes}")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (y_true - 1, y_pred - 1), 1)
    return conf


@dataclass(frozen=True, eq=False)
class EvalReport:
    confusion: np.ndarray
    oa: float
    aa: float
    kappa: float
    per_class: np.ndarray

    def to_dict(self, method=None, params=None):
        return {
            "method": method,
            "params": params or {},
            "oa": self.oa,
            "aa": self.aa,
            "kappa": self.kappa,
            "per_class": [None if np.isnan(v) else float(v) for v in self.per_class],
            "confusion": self.confusion.tolist(),
        }

    def to_json(self, method=None, params=None):
        return json.dumps(self.to_dict(method, params), indent=2, sort_keys=True) + "\n"


def kappa_score(po, pe):
    """(po - pe) / (1 - pe), defined as 1 (po = 1) or 0 (po < 1) when pe = 1."""
    if pe >= 1.0:
        return 1.0 if po == 1.0 else 0.0
    return (po - pe) / (1.0 - pe)


def metrics_from_confusion(conf):
    """OA, AA (mean per-class recall) and kappa with a guarded p_e = 1 case.

    Classes without test samples get a NaN recall and are left out of AA.
    """
    conf = np.asarray(conf, dtype=np.int64)
    total = conf.sum()
    if total == 0:
        raise ParameterError("confusion matrix is empty")
    rows = conf.sum(axis=1)
    cols = conf.sum(axis=0)
    po = np.trace(conf) / total
    pe = float((rows.astype(np.float64) * cols).sum() / (float(total) ** 2))
    kappa = kappa_score(po, pe)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(rows > 0, np.diag(conf) / np.where(rows > 0, rows, 1), np.nan)
    aa = float(np.nanmean(per_class))
    return EvalReport(conf, float(po), aa, float(kappa), per_class)


def compute_metrics(predictions, split, n_classes):
    """Score predictions given either as an array aligned with ``split.test_idx``
    or as a mapping ``test pixel -> class``."""
    if isinstance(predictions, dict):
        test = set(split.test_idx.tolist())
        extra = set(predictions) - test
        if extra:
            raise ConsistencyError(f"predictions for non-test pixels {sorted(extra)[:10]}")
        if len(predictions) != len(test):
            raise ConsistencyError("predictions do not cover every test pixel")
        y_pred = np.array([predictions[i] for i in split.test_idx.tolist()], dtype=np.int64)
    else:
        y_pred = np.asarray(predictions, dtype=np.int64)
        if y_pred.shape != split.test_idx.shape:
            raise ConsistencyError(
                f"{y_pred.size} predictions for {split.test_idx.size} test pixels"
            )
    return metrics_from_confusion(confusion_matrix(split.test_lab, y_pred, n_classes))


def render_class_map(predictions, split, labels):
    """Raster of predicted (test) and true (train) class ids; 0 elsewhere."""
    predictions = np.asarray(predictions, dtype=np.int64)
    if predictions.shape != split.test_idx.shape:
        raise ConsistencyError("predictions are not aligned with the test set")
    out = np.zeros(labels.height * labels.width, dtype=np.int64)
    if split.train_idx.size and split.train_idx.max() >= out.size:
        raise ConsistencyError("split does not fit the label map")
    if split.test_idx.size and split.test_idx.max() >= out.size:
        raise ConsistencyError("split does not fit the label map")
    out[split.train_idx] = split.train_lab
    out[split.test_idx] = predictions
    return out.reshape(labels.height, labels.width)


def write_class_map(prefix, raster, names=None):
    """Write ``prefix.pgm`` (P5) and the ``prefix.legend.csv`` id,name legend."""
    raster = np.asarray(raster)
    write_pgm(prefix + ".pgm", raster)
    n = max(int(raster.max()), len(names or {}))
    with open(prefix + ".legend.csv", "w", encoding="ascii") as fh:
        fh.write("id,name\n")
        fh.writelines(f"{cid},{(names or {}).get(cid, f'Class {cid}')}\n" for cid in range(1, n + 1))
    return prefix + ".pgm", prefix + ".legend.csv"


def read_class_names(path):
    """Parse an ``id,name`` CSV (header optional)."""
    names = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.lower().startswith("id,"):
                continue
            cid, name = line.split(",", 1)
            names[int(cid)] = name.strip()
    return names
