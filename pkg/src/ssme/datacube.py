"""Hyperspectral cube and label raster I/O, flattening and synthetic scenes.

Cubes are held band-sequential: ``data[b, row, col]``.  Pixels are addressed
by the row-major linear index ``n = row * width + col`` throughout the package.
"""
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    ConsistencyError,
    CubeIOError,
    DataError,
    FormatError,
    ParameterError,
    UnsupportedError,
)
from .utils import check_positive_int, rng_stream

ENVI_DTYPES = {2: "i2", 4: "f4", 12: "u2"}
_DTYPE_CODES = {np.dtype("int16"): 2, np.dtype("float32"): 4, np.dtype("uint16"): 12}
INTERLEAVES = ("bsq", "bil", "bip")
MAX_LABEL_ID = 65535


def _freeze(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HyperCube:
    """A ``bands x height x width`` radiance/reflectance cube."""

    data: np.ndarray
    wavelengths: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="C")
        if data.ndim != 3 or min(data.shape) < 1:
            raise ParameterError(f"cube data must be a non-empty 3-D array, got {data.shape}")
        bad = np.flatnonzero(~np.isfinite(data.ravel()))
        if bad.size:
            raise DataError(f"non-finite sample at offset {bad[0]}")
        object.__setattr__(self, "data", _freeze(data))
        if self.wavelengths is not None:
            wl = np.array(self.wavelengths, dtype=np.float64)
            if wl.shape != (data.shape[0],):
                raise FormatError(f"{wl.size} wavelengths for {data.shape[0]} bands")
            if np.any(np.diff(wl) <= 0):
                raise FormatError("wavelengths must be strictly increasing")
            object.__setattr__(self, "wavelengths", _freeze(wl))

    @property
    def bands(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.height, self.width

    @property
    def n_pixels(self):
        return self.height * self.width

    def samples(self):
        """Pixels as rows: an ``N x D`` array (the scikit-learn orientation)."""
        return np.ascontiguousarray(flatten(self).T)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel class ids; 0 marks unlabeled pixels."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or min(lab.shape) < 1:
            raise ParameterError(f"labels must be a non-empty 2-D array, got {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer) and not np.all(lab == np.round(lab)):
            raise FormatError("label ids must be integers")
        lab = lab.astype(np.int64)
        if lab.min() < 0:
            raise FormatError("negative label id")
        if lab.max() > MAX_LABEL_ID:
            raise UnsupportedError(f"label id {lab.max()} exceeds {MAX_LABEL_ID}")
        present = set(np.unique(lab).tolist()) - {0}
        if present and present != set(range(1, max(present) + 1)):
            missing = sorted(set(range(1, max(present) + 1)) - present)
            raise FormatError(f"class ids are not contiguous; missing {missing}")
        object.__setattr__(self, "labels", _freeze(lab))

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def shape(self):
        return self.labels.shape

    @property
    def n_classes(self):
        return int(self.labels.max())

    def flat(self):
        return self.labels.ravel()

    def histogram(self):
        ids, counts = np.unique(self.labels, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}


def check_compatible(cube, labels):
    if cube.shape != labels.shape:
        raise ConsistencyError(f"cube is {cube.shape} but labels are {labels.shape}")


# -- flattening ---------------------------------------------------------------

def flatten(cube):
    """Return the ``D x N`` spectral matrix; column n is pixel n's spectrum."""
    return cube.data.reshape(cube.bands, cube.n_pixels)


def unflatten(X, height, width, wavelengths=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != height * width:
        raise ParameterError(f"matrix of shape {X.shape} does not hold {height}x{width} pixels")
    return HyperCube(X.reshape(X.shape[0], height, width), wavelengths=wavelengths)


def minmax_normalize(cube):
    """Scale each band independently to [0, 1]; constant bands map to 0."""
    d = cube.data
    lo = d.min(axis=(1, 2), keepdims=True)
    span = d.max(axis=(1, 2), keepdims=True) - lo
    out = np.where(span > 0, (d - lo) / np.where(span > 0, span, 1.0), 0.0)
    meta = dict(cube.meta, normalized="minmax")
    return HyperCube(out, wavelengths=cube.wavelengths, meta=meta)


# -- ENVI-style cube headers ----------------------------------------------------

def parse_header(text):
    """Parse ``key = value`` header lines; brace-delimited values may span lines."""
    fields = {}
    lines = text.splitlines()
    i = 0
    if lines and lines[0].strip().upper() == "ENVI":
        i = 1
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line.strip() or line.lstrip().startswith(";"):
            continue
        if "=" not in line:
            raise FormatError(f"malformed header line: {line!r}")
        key, value = line.split("=", 1)
        value = value.strip()
        if value.startswith("{"):
            while "}" not in value and i < len(lines):
                value += " " + lines[i].strip()
                i += 1
            if "}" not in value:
                raise FormatError(f"unterminated brace list for {key.strip()!r}")
            value = value[1 : value.index("}")].strip()
        fields[key.strip().lower()] = value
    return fields


def _header_int(fields, key):
    if key not in fields:
        raise FormatError(f"header is missing required key {key!r}")
    try:
        return int(fields[key])
    except ValueError:
        raise FormatError(f"header key {key!r} is not an integer: {fields[key]!r}") from None


def _find_binary(header_path):
    base, ext = os.path.splitext(header_path)
    candidates = [base] if ext.lower() == ".hdr" else []
    candidates += [base + e for e in (".img", ".raw", ".bin", ".dat", ".bsq", ".bil", ".bip")]
    if ext.lower() != ".hdr":
        candidates.insert(0, header_path + ".img")
    for c in candidates:
        if os.path.isfile(c):
            return c
    raise CubeIOError(f"no binary data file found next to {header_path}")


def load_cube(header_path, data_path=None):
    """Read a cube described by an ENVI-style header.

    Every interleave is normalized to band-sequential order and samples are
    converted to float64.
    """
    if not os.path.isfile(header_path):
        raise CubeIOError(f"header not found: {header_path}")
    with open(header_path, encoding="ascii", errors="replace") as fh:
        fields = parse_header(fh.read())
    samples = _header_int(fields, "samples")
    lines = _header_int(fields, "lines")
    bands = _header_int(fields, "bands")
    if min(samples, lines, bands) < 1:
        raise FormatError("samples, lines and bands must be positive")
    interleave = fields.get("interleave", "").strip().lower()
    if interleave not in INTERLEAVES:
        raise FormatError(f"unknown interleave {interleave!r}")
    code = _header_int(fields, "data type")
    if code not in ENVI_DTYPES:
        raise FormatError(f"unsupported data type code {code}")
    order = _header_int(fields, "byte order")
    if order not in (0, 1):
        raise FormatError(f"byte order must be 0 or 1, got {order}")
    offset = int(fields.get("header offset", "0") or 0)
    dtype = np.dtype(("<" if order == 0 else ">") + ENVI_DTYPES[code])

    data_path = data_path or _find_binary(header_path)
    count = samples * lines * bands
    expected = offset + count * dtype.itemsize
    actual = os.path.getsize(data_path)
    if actual != expected:
        raise CubeIOError(
            f"{data_path}: expected {expected} bytes for {samples}x{lines}x{bands} "
            f"samples, found {actual}"
        )
    raw = np.fromfile(data_path, dtype=dtype, count=count, offset=offset)
    if dtype.kind == "f":
        bad = np.flatnonzero(~np.isfinite(raw))
        if bad.size:
            raise DataError(f"{data_path}: non-finite sample at element offset {bad[0]}")
    raw = raw.astype(np.float64)
    if interleave == "bsq":
        data = raw.reshape(bands, lines, samples)
    elif interleave == "bil":
        data = raw.reshape(lines, bands, samples).transpose(1, 0, 2)
    else:
        data = raw.reshape(lines, samples, bands).transpose(2, 0, 1)

    wavelengths = None
    if fields.get("wavelength"):
        try:
            wavelengths = [float(v) for v in re.split(r"[,\s]+", fields["wavelength"]) if v]
        except ValueError:
            raise FormatError("wavelength list is not numeric") from None
    meta = {
        "source": os.path.abspath(header_path),
        "bands": bands,
        "interleave": interleave,
        "data_type": code,
    }
    return HyperCube(data, wavelengths=wavelengths, meta=meta)


def write_cube(header_path, cube, interleave="bsq", dtype="float32", byte_order=0):
    """Write ``cube`` as an ENVI-style header plus ``.img`` binary."""
    interleave = interleave.lower()
    if interleave not in INTERLEAVES:
        raise FormatError(f"unknown interleave {interleave!r}")
    dt = np.dtype(dtype)
    if dt not in _DTYPE_CODES:
        raise FormatError(f"unsupported data type {dtype}")
    d = cube.data
    if interleave == "bil":
        d = d.transpose(1, 0, 2)
    elif interleave == "bip":
        d = d.transpose(1, 2, 0)
    out = np.ascontiguousarray(d).astype(dt.newbyteorder("<" if byte_order == 0 else ">"))
    base = header_path[:-4] if header_path.lower().endswith(".hdr") else header_path
    out.tofile(base + ".img")
    lines = [
        "ENVI",
        f"samples = {cube.width}",
        f"lines = {cube.height}",
        f"bands = {cube.bands}",
        "header offset = 0",
        f"data type = {_DTYPE_CODES[dt]}",
        f"interleave = {interleave}",
        f"byte order = {byte_order}",
    ]
    if cube.wavelengths is not None:
        lines.append("wavelength = {" + ", ".join(repr(float(w)) for w in cube.wavelengths) + "}")
    with open(header_path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    return base + ".img"


# -- label rasters ------------------------------------------------------------

def _pgm_tokens(buf, count):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(buf[start:pos].decode("ascii"))
    return tokens, pos


def _read_pgm(buf):
    (magic, w, h, maxval), pos = _pgm_tokens(buf, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError("non-integer PGM header field") from None
    if maxval > MAX_LABEL_ID:
        raise UnsupportedError(f"PGM maxval {maxval} exceeds {MAX_LABEL_ID}")
    if magic == "P2":
        values = buf[pos:].split()
        if len(values) != w * h:
            raise FormatError(f"P2 raster declares {w}x{h} but holds {len(values)} values")
        arr = np.array([int(v) for v in values], dtype=np.int64)
    else:
        body = buf[pos + 1 :]
        dt = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
        if len(body) != w * h * dt.itemsize:
            raise FormatError(
                f"P5 raster declares {w}x{h} ({w * h * dt.itemsize} bytes) but holds {len(body)}"
            )
        arr = np.frombuffer(body, dtype=dt).astype(np.int64)
    if arr.size and arr.max() > maxval:
        raise FormatError(f"label {arr.max()} exceeds declared maxval {maxval}")
    return arr.reshape(h, w)


def load_labels(path, sidecar=None):
    """Load a label raster (PGM P2/P5, or flat little-endian uint16 plus sidecar).

    The sidecar of a flat raster defaults to ``<path>.txt`` and holds three
    lines: width, height, max_id.
    """
    if not os.path.isfile(path):
        raise CubeIOError(f"label raster not found: {path}")
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] in (b"P2", b"P5"):
        return LabelMap(_read_pgm(buf))
    sidecar = sidecar or path + ".txt"
    if not os.path.isfile(sidecar):
        raise FormatError(f"{path} is not a PGM raster and has no sidecar {sidecar}")
    with open(sidecar, encoding="ascii") as fh:
        vals = fh.read().split()
    if len(vals) != 3:
        raise FormatError("label sidecar must hold width, height and max_id")
    w, h, max_id = (int(v) for v in vals)
    if max_id > MAX_LABEL_ID:
        raise UnsupportedError(f"max_id {max_id} exceeds {MAX_LABEL_ID}")
    if len(buf) != w * h * 2:
        raise FormatError(f"flat raster declares {w}x{h} ({w * h * 2} bytes) but holds {len(buf)}")
    arr = np.frombuffer(buf, dtype="<u2").astype(np.int64).reshape(h, w)
    if arr.max() > max_id:
        raise FormatError(f"label {arr.max()} exceeds declared max_id {max_id}")
    return LabelMap(arr)


def write_pgm(path, raster, binary=True):
    raster = np.asarray(raster, dtype=np.int64)
    maxval = max(int(raster.max()), 1)
    if maxval > MAX_LABEL_ID:
        raise UnsupportedError(f"value {maxval} exceeds {MAX_LABEL_ID}")
    h, w = raster.shape
    with open(path, "wb") as fh:
        if binary:
            fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
            dt = "u1" if maxval < 256 else ">u2"
            fh.write(raster.astype(dt).tobytes())
        else:
            fh.write(f"P2\n{w} {h}\n{maxval}\n".encode("ascii"))
            fh.writelines((" ".join(str(int(v)) for v in row) + "\n").encode("ascii") for row in raster)


def write_labels_raw(path, labels):
    raster = np.asarray(labels, dtype=np.int64)
    h, w = raster.shape
    raster.astype("<u2").tofile(path)
    with open(path + ".txt", "w", encoding="ascii") as fh:
        fh.write(f"{w}\n{h}\n{int(raster.max())}\n")


# -- synthetic scenes -----------------------------------------------------------

def _partition(rect, n, out):
    """Guillotine-split ``rect = (r0, r1, c0, c1)`` into ``n`` rectangles."""
    if n == 1:
        out.append(rect)
        return
    r0, r1, c0, c1 = rect
    n1 = n // 2
    rows, cols = r1 - r0, c1 - c0
    if cols >= rows:
        cut = min(max(round(cols * n1 / n), 1), cols - 1)
        a, b = (r0, r1, c0, c0 + cut), (r0, r1, c0 + cut, c1)
    else:
        cut = min(max(round(rows * n1 / n), 1), rows - 1)
        a, b = (r0, r0 + cut, c0, c1), (r0 + cut, r1, c0, c1)
    area_a = (a[1] - a[0]) * (a[3] - a[2])
    area_b = (b[1] - b[0]) * (b[3] - b[2])
    if area_a + area_b < n:
        raise ParameterError(f"cannot fit {n} rectangular regions into {rows}x{cols}")
    # keep the balanced count unless one side is too small to hold it
    n1 = min(max(n1, n - area_b), area_a)
    _partition(a, n1, out)
    _partition(b, n - n1, out)


def class_signatures(classes, bands, seed):
    """Smooth, pairwise-distinct spectral signatures, one row per class."""
    rng = rng_stream(seed, "synth.signatures")
    t = np.linspace(0.0, 1.0, bands)
    sig = np.empty((classes, bands))
    for c in range(classes):
        s = np.full(bands, rng.uniform(0.3, 0.7))
        for _ in range(3):
            amp = rng.uniform(-0.3, 0.3)
            center = rng.uniform(0.0, 1.0)
            width = rng.uniform(0.08, 0.25)
            s += amp * np.exp(-((t - center) ** 2) / (2 * width**2))
        sig[c] = s
    return sig


def synth_cube(height, width, classes, bands, noise_sigma=0.0, seed=0):
    """Labeled test scene of ``classes`` rectangular regions.

    Each region carries its class signature plus i.i.d. Gaussian noise of
    standard deviation ``noise_sigma``.  Labels run 1..classes with no
    background.
    """
    height = check_positive_int(height, "height")
    width = check_positive_int(width, "width")
    classes = check_positive_int(classes, "classes", 2)
    bands = check_positive_int(bands, "bands", 2)
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be non-negative")
    if classes > height * width:
        raise ParameterError(f"{classes} classes do not fit in {height}x{width} pixels")
    regions = []
    _partition((0, height, 0, width), classes, regions)
    labels = np.zeros((height, width), dtype=np.int64)
    for c, (r0, r1, c0, c1) in enumerate(regions, start=1):
        labels[r0:r1, c0:c1] = c
    sig = class_signatures(classes, bands, seed)
    data = sig[labels - 1].transpose(2, 0, 1).copy()
    if noise_sigma > 0:
        data += rng_stream(seed, "synth.noise").normal(0.0, noise_sigma, size=data.shape)
    meta = {"synthetic": True, "seed": int(seed), "noise_sigma": float(noise_sigma), "bands": bands}
    return HyperCube(data, meta=meta), LabelMap(labels)
