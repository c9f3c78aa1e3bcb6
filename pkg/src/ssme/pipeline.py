"""Run configuration and the load -> graph -> weights -> embed -> classify chain."""
import hashlib
import json
import os
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import __version__
from .datacube import check_compatible, load_cube, load_labels, minmax_normalize
from .embed import (
    embed_le,
    embed_lle,
    embed_osf,
    embed_pca,
    embed_ssme,
    write_embedding,
)
from .evaluation import (
    INDIAN_PINES_CONVENTIONAL,
    classify_nn,
    compute_metrics,
    indian_pines_spec,
    make_split,
    read_class_names,
    render_class_map,
    table_class_names,
    uniform_spec,
    write_class_map,
)
from .exceptions import ParameterError, StageError
from .graph import SpectralNeighborhood, spatial_grid, spectral_knn
from .weights import WeightSet, affinity_to_text, build_affinity, solve_all_weights

METHODS = ("ssme", "pca", "le", "lle", "osf")
# embedding dimensions of the published comparison
DEFAULT_DIMS = {"ssme": 16, "pca": 30, "le": 60, "lle": 60}
DUMPS = ("graph", "affinity", "embedding", "map")
PAPER_GRID = (("osf", None), ("pca", 30), ("le", 60), ("lle", 60), ("ssme", 16))
STAGES = ("load", "graph", "weights", "eigen", "classify", "report")


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"not a boolean: {v!r}")


def _sigma(v):
    if v is None or str(v).strip().lower() == "auto":
        return "auto"
    return float(v)


def _dumps(v):
    if isinstance(v, str):
        v = [p for p in v.replace(",", " ").split() if p]
    return tuple(v)


def _opt_int(v):
    return None if v is None or str(v).strip().lower() in ("", "none", "auto") else int(v)


_CONVERT = {
    "k": int, "dims": _opt_int, "eta": float, "ridge": float, "sigma": _sigma,
    "seed": int, "normalize": _bool, "threads": int, "dump": _dumps, "clamp": _bool,
    "cache": _bool, "train": lambda v: str(v).strip().lower(),
}


@dataclass(frozen=True)
class RunConfig:
    cube: str = None
    labels: str = None
    method: str = "ssme"
    k: int = 30
    dims: int = None
    eta: float = 1e-3
    ridge: float = 1e-3
    sigma: object = "auto"
    seed: int = 0
    normalize: bool = False
    threads: int = 1
    out: str = "ssme-out"
    dump: tuple = ()
    train: str = "10"
    names: str = None
    clamp: bool = True
    affinity_scaling: str = "mean_row_sum"
    cache: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; choose from {METHODS}")
        bad = set(self.dump) - set(DUMPS)
        if bad:
            raise ParameterError(f"unknown dump kind(s) {sorted(bad)}")
        if "affinity" in self.dump and self.method != "ssme":
            raise ParameterError("the affinity dump exists only for method=ssme")
        if "graph" in self.dump and self.method not in ("ssme", "lle", "le"):
            raise ParameterError(f"method {self.method} builds no neighbor graph to dump")
        if self.k < 1:
            raise ParameterError("k must be positive")
        if self.method == "ssme" and not self.eta > 0:
            raise ParameterError("ssme requires a positive eta")
        if self.ridge < 0:
            raise ParameterError("ridge must be non-negative")
        if self.threads < 1:
            raise ParameterError("threads must be >= 1")
        if self.affinity_scaling not in ("mean_row_sum", "none"):
            raise ParameterError("affinity_scaling must be 'mean_row_sum' or 'none'")
        train = str(self.train).strip().lower()
        if train != "table1" and not train.isdigit():
            raise ParameterError(f"train must be a per-class count or 'table1', got {self.train!r}")

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ParameterError(f"unknown config key(s): {sorted(unknown)}")
        kw = {}
        for key, value in mapping.items():
            if value is None:
                continue
            kw[key] = _CONVERT.get(key, str)(value)
        return cls(**kw)

    def resolved_dims(self, bands):
        if self.method == "osf":
            return bands
        return self.dims if self.dims is not None else DEFAULT_DIMS[self.method]

    def numeric_params(self, bands):
        """Parameters that influence the numbers in the report."""
        p = {
            "method": self.method,
            "dims": self.resolved_dims(bands),
            "seed": self.seed,
            "normalize": self.normalize,
            "train": str(self.train),
        }
        if self.method in ("ssme", "lle", "le"):
            p["k"] = self.k
        if self.method in ("ssme", "lle"):
            p["ridge"] = self.ridge
        if self.method == "ssme":
            p.update(eta=self.eta, clamp=self.clamp, affinity_scaling=self.affinity_scaling)
        if self.method == "le":
            p["sigma"] = self.sigma
        return p


def read_config_file(path):
    """Flat ``key = value`` file; '#' starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def build_config(path=None, **overrides):
    """Config file values overridden by keyword arguments that are not None."""
    values = read_config_file(path) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_mapping(values)


# -- stage cache ----------------------------------------------------------------

def cache_dir():
    return os.environ.get("SSME_CACHE_DIR") or os.path.join(
        os.path.expanduser("~"), ".cache", "ssme")


def _cache_key(cube, cfg):
    X = cube.data
    h = hashlib.sha256()
    h.update(str(X.shape).encode())
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(json.dumps([__version__, cfg.k, cfg.eta, cfg.ridge, cfg.normalize],
                        sort_keys=True).encode())
    return h.hexdigest()


def _cache_load(key):
    path = os.path.join(cache_dir(), key + ".npz")
    if not os.path.isfile(path):
        return None
    with np.load(path) as z:
        nbrs = SpectralNeighborhood(z["nbr_idx"], z["nbr_dist"])
        ws = WeightSet(z["spectral_ids"], z["columns"], z["raw"], z["patch"],
                       z["coupling_residual"], z["penalty"], z["converged"], float(z["eta"]))
    return nbrs, ws


def _cache_store(key, nbrs, ws):
    os.makedirs(cache_dir(), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=cache_dir(), suffix=".npz")
    os.close(fd)
    np.savez(tmp, nbr_idx=nbrs.indices, nbr_dist=nbrs.distances,
             spectral_ids=ws.spectral_ids, columns=ws.columns, raw=ws.raw, patch=ws.patch,
             coupling_residual=ws.coupling_residual, penalty=ws.penalty,
             converged=ws.converged, eta=ws.eta)
    os.replace(tmp, os.path.join(cache_dir(), key + ".npz"))


# -- stages ---------------------------------------------------------------------

class _Timer:
    def __init__(self):
        self.times = {s: 0.0 for s in STAGES}
        self.current = None

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self_inner):
                timer.current = name
                self_inner.t0 = time.perf_counter()

            def __exit__(self_inner, exc_type, exc, tb):
                timer.times[name] += time.perf_counter() - self_inner.t0
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(name, exc) from exc
                return False

        return _Ctx()


def load_inputs(cfg, need_labels=True):
    if not cfg.cube:
        raise ParameterError("no input cube configured")
    cube = load_cube(cfg.cube)
    if cfg.normalize:
        cube = minmax_normalize(cube)
    labels = None
    if need_labels:
        if not cfg.labels:
            raise ParameterError("no label raster configured")
        labels = load_labels(cfg.labels)
        check_compatible(cube, labels)
    return cube, labels


def class_names(cfg, n_classes):
    if cfg.names is None:
        return {}
    if cfg.names == "indian-pines":
        return dict(INDIAN_PINES_CONVENTIONAL)
    if cfg.names == "table1":
        return table_class_names()
    return read_class_names(cfg.names)


def split_spec(cfg, labels, names):
    if str(cfg.train).lower() == "table1":
        if not names:
            raise ParameterError("train=table1 needs class names (names = path|indian-pines|table1)")
        return indian_pines_spec(names, cfg.seed)
    return uniform_spec(labels, int(cfg.train), cfg.seed)


def compute_embedding(cfg, cube, timer, staging=None, info=None):
    """Run graph, weight and eigen stages for ``cfg.method``; write requested dumps."""
    info = {} if info is None else info
    X = cube.data.reshape(cube.bands, -1)
    d = cfg.resolved_dims(cube.bands)
    nbrs = None
    if cfg.method == "ssme":
        key = _cache_key(cube, cfg) if cfg.cache else None
        cached = _cache_load(key) if key else None
        info["cache_hit"] = cached is not None
        if cached:
            nbrs, ws = cached
        else:
            with timer.stage("graph"):
                nbrs = spectral_knn(X, cfg.k, n_jobs=cfg.threads)
            with timer.stage("weights"):
                ws = solve_all_weights(X, spatial_grid(cube.height, cube.width), nbrs,
                                       eta=cfg.eta, ridge=cfg.ridge, n_jobs=cfg.threads)
            if key:
                _cache_store(key, nbrs, ws)
        with timer.stage("weights"):
            A = build_affinity(ws, clamp=cfg.clamp)
        info.update(ws.summary())
        with timer.stage("eigen"):
            scaling = None if cfg.affinity_scaling == "none" else cfg.affinity_scaling
            emb = embed_ssme(A, d, affinity_scaling=scaling)
        info["affinity_scale"] = emb.provenance["affinity_scale"]
        if staging and "affinity" in cfg.dump:
            with open(os.path.join(staging, "affinity.txt"), "w", encoding="ascii") as fh:
                fh.write(affinity_to_text(A))
    elif cfg.method in ("lle", "le"):
        with timer.stage("graph"):
            nbrs = spectral_knn(X, cfg.k, n_jobs=cfg.threads)
        with timer.stage("eigen"):
            if cfg.method == "lle":
                emb = embed_lle(X, cfg.k, d, cfg.ridge, neighbors=nbrs)
            else:
                emb = embed_le(X, cfg.k, d, cfg.sigma, neighbors=nbrs)
                info["sigma"] = emb.provenance["sigma"]
    elif cfg.method == "pca":
        with timer.stage("eigen"):
            emb = embed_pca(X, d)
    else:
        emb = embed_osf(X)
    emb = type(emb)(emb.Y, emb.method, dict(cfg.numeric_params(cube.bands)), emb.eigenvalues)
    if staging:
        if "graph" in cfg.dump and nbrs is not None:
            with open(os.path.join(staging, "graph.txt"), "w", encoding="ascii") as fh:
                fh.write(nbrs.to_text())
        if "embedding" in cfg.dump:
            write_embedding(os.path.join(staging, "embedding.ssme"), emb)
    return emb


def _write_provenance(path, cfg, cube, timer, info):
    items = {f"config.{k}": v for k, v in asdict(cfg).items()}
    items.update({f"run.{k}": v for k, v in info.items()})
    items.update({f"time.{k}": round(v, 6) for k, v in timer.times.items()})
    items["version"] = __version__
    items["input.bands"] = cube.bands
    items["input.height"] = cube.height
    items["input.width"] = cube.width
    items["input.source"] = cube.meta.get("source")
    with open(path, "w", encoding="ascii") as fh:
        fh.writelines(f"{key} = {items[key]!r}\n" for key in sorted(items))


def _commit(staging, out):
    os.makedirs(out, exist_ok=True)
    written = []
    for name in sorted(os.listdir(staging)):
        dst = os.path.join(out, name)
        os.replace(os.path.join(staging, name), dst)
        written.append(dst)
    shutil.rmtree(staging, ignore_errors=True)
    return written


def _staged(out, produce):
    """Call ``produce(staging_dir)`` and move its files into ``out`` on success."""
    created = not os.path.isdir(out)
    os.makedirs(out, exist_ok=True)
    staging = tempfile.mkdtemp(prefix=".staging-", dir=out)
    try:
        produce(staging)
        return _commit(staging, out)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        if created and not os.listdir(out):
            os.rmdir(out)
        raise


@dataclass(frozen=True, eq=False)
class PipelineResult:
    report: object
    params: dict
    paths: list
    timings: dict
    info: dict


def run_pipeline(cfg):
    """Execute the configured chain and return a :class:`PipelineResult`.

    Artifacts are produced in a staging directory and moved into ``cfg.out``
    only after every stage succeeded.
    """
    timer = _Timer()
    info = {"threads": cfg.threads}
    out = {}

    def produce(staging):
        with timer.stage("load"):
            cube, labels = load_inputs(cfg)
            names = class_names(cfg, labels.n_classes)
            split = make_split(labels, split_spec(cfg, labels, names))
        emb = compute_embedding(cfg, cube, timer, staging, info)
        with timer.stage("classify"):
            pred = classify_nn(emb, split, n_jobs=cfg.threads)
        with timer.stage("report"):
            out["report"] = report = compute_metrics(pred, split, labels.n_classes)
            out["params"] = params = cfg.numeric_params(cube.bands)
            with open(os.path.join(staging, "report.json"), "w", encoding="ascii") as fh:
                fh.write(report.to_json(cfg.method, params))
            raster = render_class_map(pred, split, labels)
            write_class_map(os.path.join(staging, "classmap"), raster, names)
            info.update(train_pixels=int(split.train_idx.size), test_pixels=int(split.test_idx.size))
        _write_provenance(os.path.join(staging, "provenance.txt"), cfg, cube, timer, info)

    paths = _staged(cfg.out, produce)
    return PipelineResult(out["report"], out["params"], paths, dict(timer.times), info)


def run_compare(configs, out=None):
    """Run several configs on the same input and split; returns the table rows.

    Writes ``compare.json`` and an aligned ``compare.txt`` into ``out`` when given.
    """
    if not configs:
        raise ParameterError("no configurations to compare")
    ref = configs[0]
    for c in configs[1:]:
        for key in ("cube", "labels", "seed", "train", "normalize"):
            if getattr(c, key) != getattr(ref, key):
                raise ParameterError(f"configs disagree on {key!r}: {getattr(ref, key)!r} "
                                     f"vs {getattr(c, key)!r}")
    rows = []
    for c in configs:
        res = run_pipeline(c)
        d = res.report.to_dict(c.method, res.params)
        rows.append({
            "method": c.method,
            "label": f"{c.method.upper()} ({res.params['dims']})",
            "dims": res.params["dims"],
            "oa": d["oa"], "aa": d["aa"], "kappa": d["kappa"], "per_class": d["per_class"],
        })
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "compare.json"), "w", encoding="ascii") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out, "compare.txt"), "w", encoding="ascii") as fh:
            fh.write(format_table(rows))
    return rows


def format_table(rows):
    """Methods as columns; OA, AA, kappa and per-class accuracies as rows."""
    head = ["Methods"] + [r["label"] for r in rows]
    body = [
        ["OA"] + [f"{100 * r['oa']:.2f}" for r in rows],
        ["AA"] + [f"{100 * r['aa']:.2f}" for r in rows],
        ["kappa"] + [f"{r['kappa']:.4f}" for r in rows],
    ]
    n = max(len(r["per_class"]) for r in rows)
    for c in range(n):
        cells = []
        for r in rows:
            v = r["per_class"][c] if c < len(r["per_class"]) else None
            cells.append("-" if v is None else f"{100 * v:.2f}")
        body.append([f"Class {c + 1}"] + cells)
    table = [head] + body
    widths = [max(len(row[i]) for row in table) for i in range(len(head))]
    lines = []
    for j, row in enumerate(table):
        lines.append("  ".join(cell.rjust(widths[i]) if i else cell.ljust(widths[i])
                               for i, cell in enumerate(row)))
        if j in (0, 3):
            lines.append("-" * len(lines[-1]))
    return "\n".join(lines) + "\n"


def compare_configs(base, runs, out_root):
    """Expand ``[(method, dims), ...]`` into one config per run under ``out_root``."""
    configs = []
    for method, dims in runs:
        sub = os.path.join(out_root, f"{method}" if dims is None else f"{method}-{dims}")
        configs.append(replace(base, method=method, dims=dims, out=sub,
                               dump=tuple(x for x in base.dump
                                          if x in ("embedding", "map")
                                          or (x == "graph" and method in ("ssme", "lle", "le"))
                                          or (x == "affinity" and method == "ssme"))))
    return configs


def parse_runs(text):
    """``"osf,pca:30,ssme:16"`` -> ``[("osf", None), ("pca", 30), ("ssme", 16)]``."""
    runs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        method, _, dims = part.partition(":")
        runs.append((method.strip().lower(), int(dims) if dims else None))
    return runs


def run_embed(cfg):
    """Embedding stage only; always writes ``embedding.ssme`` plus provenance."""
    timer = _Timer()
    info = {"threads": cfg.threads}
    cfg = replace(cfg, dump=tuple(sorted(set(cfg.dump) | {"embedding"} - {"map"})))

    def produce(staging):
        with timer.stage("load"):
            cube, _ = load_inputs(cfg, need_labels=False)
        compute_embedding(cfg, cube, timer, staging, info)
        _write_provenance(os.path.join(staging, "provenance.txt"), cfg, cube, timer, info)

    return _staged(cfg.out, produce)


def run_classify(embedding_path, cfg):
    """1-NN labels for the test pixels of the configured split, as a class map."""
    from .embed import read_embedding

    def produce(staging):
        with timer.stage("load"):
            emb = read_embedding(embedding_path)
            labels = load_labels(cfg.labels)
            if emb.pixels != labels.height * labels.width:
                raise ParameterError(f"embedding has {emb.pixels} pixels, labels "
                                     f"{labels.height * labels.width}")
            names = class_names(cfg, labels.n_classes)
            split = make_split(labels, split_spec(cfg, labels, names))
        with timer.stage("classify"):
            pred = classify_nn(emb, split, n_jobs=cfg.threads)
            write_class_map(os.path.join(staging, "classmap"),
                            render_class_map(pred, split, labels), names)

    timer = _Timer()
    return _staged(cfg.out, produce)


def run_evaluate(classmap_path, cfg):
    """Score a class map against the labels on the configured split's test pixels."""
    labels = load_labels(cfg.labels)
    pred_map = load_labels(classmap_path)
    if pred_map.shape != labels.shape:
        raise ParameterError(f"class map {pred_map.shape} does not match labels {labels.shape}")
    names = class_names(cfg, labels.n_classes)
    split = make_split(labels, split_spec(cfg, labels, names))
    report = compute_metrics(pred_map.flat()[split.test_idx], split, labels.n_classes)

    def produce(staging):
        with open(os.path.join(staging, "report.json"), "w", encoding="ascii") as fh:
            fh.write(report.to_json(None, {"seed": cfg.seed, "train": str(cfg.train)}))

    return report, _staged(cfg.out, produce)
