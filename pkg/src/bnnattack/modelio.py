"""Model files, IDX datasets and synthetic models/data.

Model text format (version 1), one record per line::

    bnn-model 1
    inputs <n>
    hidden <r_1> ... <r_D>
    classes <C>
    meta <key> <value>             (optional, repeatable)
    layer <l>                      (l = 1..D)
    row <string over +/->          (r_{l-1} rows of length r_l)
    threshold <float> ...          (r_l values)
    polarity <string over +/->     (length r_l)
    output
    row <string over +/->          (r_D rows of length C)
    scale <float> ...
    bias <float> ...
    end

Floats are written with ``repr`` so a load/save round trip is bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .network import BnnModel, ModelError

FORMAT_VERSION = 1
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class ModelFileError(ValueError):
    pass


class ModelFormatError(ModelFileError):
    """The document is not a well-formed model file."""


class ModelShapeError(ModelFileError):
    """Declared sizes disagree with the stored rows."""


class NonPositiveScaleError(ModelFileError):
    """An output scale is zero or negative."""


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


# ---------------------------------------------------------------------------
# model files


def _signs(row: str) -> np.ndarray:
    if not row or set(row) - {"+", "-"}:
        raise ModelFormatError(f"bad sign string {row!r}")
    return np.array([1 if ch == "+" else -1 for ch in row], dtype=np.int8)


def _sign_string(values) -> str:
    return "".join("+" if v > 0 else "-" for v in values)


def _num(v) -> str:
    return repr(float(v))


def save_model(model: BnnModel, sink, metadata: dict | None = None) -> None:
    out = [f"bnn-model {FORMAT_VERSION}",
           f"inputs {model.n_inputs}",
           "hidden " + " ".join(str(r) for r in model.widths),
           f"classes {model.n_classes}"]
    for key, value in (metadata or {}).items():
        key, value = str(key), str(value)
        if not key or any(ch.isspace() for ch in key) or "\n" in value:
            raise ModelFormatError(f"metadata entry {key!r} cannot be written")
        out.append(f"meta {key} {value}")
    for l in range(model.depth):
        out.append(f"layer {l + 1}")
        out += ["row " + _sign_string(w) for w in model.weights[l]]
        out.append("threshold " + " ".join(_num(t) for t in model.thresholds[l]))
        out.append("polarity " + _sign_string(model.polarity[l]))
    out.append("output")
    out += ["row " + _sign_string(w) for w in model.weights[-1]]
    out.append("scale " + " ".join(_num(s) for s in model.out_scale))
    out.append("bias " + " ".join(_num(b) for b in model.out_bias))
    out.append("end")
    sink.write("\n".join(out) + "\n")


class _Lines:
    def __init__(self, text: str):
        self.lines = [ln.strip() for ln in text.splitlines()]
        self.lines = [ln for ln in self.lines if ln and not ln.startswith("#")]
        self.pos = 0

    def next(self, keyword: str) -> str:
        if self.pos >= len(self.lines):
            raise ModelFormatError(f"unexpected end of file, expected {keyword!r}")
        line = self.lines[self.pos]
        head, _, rest = line.partition(" ")
        if head != keyword:
            raise ModelFormatError(f"line {self.pos + 1}: expected {keyword!r}, got {head!r}")
        self.pos += 1
        return rest.strip()

    def peek(self) -> str:
        return self.lines[self.pos].partition(" ")[0] if self.pos < len(self.lines) else ""


def _ints(text: str, what: str) -> list:
    try:
        vals = [int(t) for t in text.split()]
    except ValueError:
        raise ModelFormatError(f"{what}: expected integers, got {text!r}") from None
    if any(v < 1 for v in vals):
        raise ModelShapeError(f"{what}: sizes must be positive")
    return vals


def _single(text: str, what: str) -> int:
    vals = _ints(text, what)
    if len(vals) != 1:
        raise ModelFormatError(f"{what}: expected one integer, got {text!r}")
    return vals[0]


def _floats(text: str, count: int, what: str) -> np.ndarray:
    try:
        vals = np.array([float(t) for t in text.split()], dtype=np.float64)
    except ValueError:
        raise ModelFormatError(f"{what}: expected numbers, got {text!r}") from None
    if vals.shape != (count,):
        raise ModelShapeError(f"{what}: expected {count} values, got {vals.size}")
    return vals


def _matrix(lines: _Lines, rows: int, cols: int, what: str) -> np.ndarray:
    out = []
    for i in range(rows):
        if lines.peek() != "row":
            raise ModelShapeError(f"{what}: expected {rows} rows, found {i}")
        r = _signs(lines.next("row"))
        if r.size != cols:
            raise ModelShapeError(f"{what} row {i}: length {r.size}, expected {cols}")
        out.append(r)
    if lines.peek() == "row":
        raise ModelShapeError(f"{what}: more than {rows} rows")
    return np.array(out, dtype=np.int8)


def read_model_file(source):
    """Parse a model document; returns ``(model, metadata)``."""
    text = source.read() if hasattr(source, "read") else str(source)
    lines = _Lines(text)
    version = lines.next("bnn-model")
    if version != str(FORMAT_VERSION):
        raise ModelFormatError(f"unsupported model format version {version!r}")
    n = _single(lines.next("inputs"), "inputs")
    hidden = _ints(lines.next("hidden"), "hidden")
    if not hidden:
        raise ModelShapeError("at least one hidden layer is required")
    classes = _single(lines.next("classes"), "classes")
    meta = {}
    while lines.peek() == "meta":
        key, _, value = lines.next("meta").partition(" ")
        meta[key] = value
    sizes = [n, *hidden, classes]
    weights, taus, pols = [], [], []
    for l in range(len(hidden)):
        if lines.next("layer") != str(l + 1):
            raise ModelFormatError(f"expected layer {l + 1}")
        weights.append(_matrix(lines, sizes[l], sizes[l + 1], f"layer {l + 1}"))
        taus.append(_floats(lines.next("threshold"), sizes[l + 1], f"layer {l + 1} threshold"))
        pol = _signs(lines.next("polarity"))
        if pol.size != sizes[l + 1]:
            raise ModelShapeError(f"layer {l + 1} polarity: length {pol.size}, expected {sizes[l + 1]}")
        pols.append(pol)
    lines.next("output")
    weights.append(_matrix(lines, hidden[-1], classes, "output"))
    scale = _floats(lines.next("scale"), classes, "scale")
    bias = _floats(lines.next("bias"), classes, "bias")
    lines.next("end")
    if lines.pos != len(lines.lines):
        raise ModelFormatError("content after 'end'")
    if not np.all(scale > 0):
        raise NonPositiveScaleError("output scales must be strictly positive")
    try:
        model = BnnModel(tuple(weights), tuple(taus), tuple(pols), scale, bias)
    except ModelError as exc:
        raise ModelFormatError(str(exc)) from exc
    return model, meta


def load_model(source) -> BnnModel:
    return read_model_file(source)[0]


def load_model_path(path) -> BnnModel:
    with open(path) as f:
        return load_model(f)


def save_model_path(model: BnnModel, path, metadata=None) -> None:
    with open(path, "w") as f:
        save_model(model, f, metadata)


# ---------------------------------------------------------------------------
# IDX datasets


@dataclass
class Dataset:
    images: np.ndarray  # (count, n) in [0, 1]
    labels: np.ndarray  # (count,)
    n_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels disagree in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label outside class range")

    @property
    def n(self) -> int:
        return self.images.shape[1]

    def __len__(self):
        return self.images.shape[0]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.n_classes)


def _read_exact(stream, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise IdxTruncatedError(f"{what}: expected {size} bytes, got {len(data)}")
    return data


def _read_header(stream, magic: int, what: str):
    (found,) = struct.unpack(">I", _read_exact(stream, 4, what + " magic"))
    if found != magic:
        raise IdxMagicError(f"{what}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    return struct.unpack(">" + "I" * ndim, _read_exact(stream, 4 * ndim, what + " header"))


def load_idx(images, labels, n_classes: int | None = None) -> Dataset:
    """Read an IDX image/label pair from binary streams; pixels are scaled by 1/255."""
    count, rows, cols = _read_header(images, IMAGE_MAGIC, "images")
    (n_labels,) = _read_header(labels, LABEL_MAGIC, "labels")
    if count != n_labels:
        raise IdxCountMismatchError(f"{count} images but {n_labels} labels")
    pixels = np.frombuffer(_read_exact(images, count * rows * cols, "image payload"), dtype=np.uint8)
    lab = np.frombuffer(_read_exact(labels, count, "label payload"), dtype=np.uint8).astype(np.int64)
    if n_classes is None:
        n_classes = max(int(lab.max()) + 1, 2) if count else 2
    return Dataset(pixels.reshape(count, rows * cols) / 255.0, lab, n_classes)


def load_idx_paths(images_path, labels_path, n_classes=None) -> Dataset:
    with open(images_path, "rb") as fi, open(labels_path, "rb") as fl:
        return load_idx(fi, fl, n_classes)


def save_idx(dataset: Dataset, images, labels, shape=None) -> None:
    """Write ``dataset`` as IDX; pixel values are rounded to multiples of 1/255."""
    count, n = dataset.images.shape
    rows, cols = shape if shape is not None else (1, n)
    if rows * cols != n:
        raise ValueError(f"shape {shape} does not hold {n} pixels")
    images.write(struct.pack(">IIII", IMAGE_MAGIC, count, rows, cols))
    images.write(np.round(dataset.images * 255).astype(np.uint8).tobytes())
    labels.write(struct.pack(">II", LABEL_MAGIC, count))
    labels.write(dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# synthetic data


def generate_random_model(n: int, widths, classes: int, seed: int = 0) -> BnnModel:
    rng = np.random.default_rng(seed)
    sizes = [n, *widths, classes]
    weights = [rng.choice(np.array([-1, 1], dtype=np.int8), size=(a, b)) for a, b in zip(sizes, sizes[1:])]
    return BnnModel.plain(weights)


def make_blobs(count: int, n: int, n_classes: int = 2, spread: float = 0.15, seed: int = 0) -> Dataset:
    """Gaussian clusters in [0, 1]^n quantized to the 1/255 grid."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.2, 0.8, size=(n_classes, n))
    labels = rng.integers(0, n_classes, size=count)
    points = centers[labels] + rng.normal(0.0, spread, size=(count, n))
    points = np.round(np.clip(points, 0.0, 1.0) * 255) / 255
    return Dataset(points, labels, n_classes)
