"""Dataset loading: MNIST IDX files, tabular CSV, and synthetic generators.

Tabular CSVs get one-hot encoding of categorical columns and z-score
standardization of continuous columns, both fitted on the train split
only.  Synthetic generators are fully determined by their seed.
"""

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DatasetError
from .prng import stream

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049

SYNTHETIC_KINDS = ("two_moons", "blobs", "xor_grid", "synthetic_digits")
DATASET_KINDS = ("mnist", "csv") + SYNTHETIC_KINDS


@dataclass
class Dataset:
    inputs: np.ndarray          # (N, ...) float64
    labels: np.ndarray          # (N,) int64
    train_idx: np.ndarray
    val_idx: np.ndarray
    num_classes: int
    meta: dict = field(default_factory=dict)

    @property
    def train_inputs(self):
        return self.inputs[self.train_idx]

    @property
    def train_labels(self):
        return self.labels[self.train_idx]

    @property
    def val_inputs(self):
        return self.inputs[self.val_idx]

    @property
    def val_labels(self):
        return self.labels[self.val_idx]


def _open_maybe_gz(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    """IDX image file (big-endian magic 2051) as float64 scaled to [0, 1]."""
    with _open_maybe_gz(path) as fh:
        head = fh.read(4)
        if len(head) < 4:
            raise DatasetError(f"{path}: truncated IDX header")
        (magic,) = struct.unpack(">i", head)
        if magic != IDX_IMAGE_MAGIC:
            raise DatasetError(f"{path}: bad magic {magic}, expected {IDX_IMAGE_MAGIC}")
        count, rows, cols = struct.unpack(">iii", fh.read(12))
        raw = fh.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise DatasetError(f"{path}: truncated pixel data")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)
    return images.astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gz(path) as fh:
        head = fh.read(4)
        if len(head) < 4:
            raise DatasetError(f"{path}: truncated IDX header")
        (magic,) = struct.unpack(">i", head)
        if magic != IDX_LABEL_MAGIC:
            raise DatasetError(f"{path}: bad magic {magic}, expected {IDX_LABEL_MAGIC}")
        (count,) = struct.unpack(">i", fh.read(4))
        raw = fh.read(count)
        if len(raw) != count:
            raise DatasetError(f"{path}: truncated label data")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def _find_idx_file(directory: Path, stem: str) -> Path:
    for suffix in ("", ".gz"):
        candidate = directory / (stem + suffix)
        if candidate.exists():
            return candidate
    raise DatasetError(f"missing {stem}[.gz] under {directory}")


def load_mnist(directory, train_size: Optional[int] = None,
               val_size: Optional[int] = None) -> Dataset:
    """MNIST from the four IDX files; t10k is the validation split."""
    directory = Path(directory)
    train_x = read_idx_images(_find_idx_file(directory, "train-images-idx3-ubyte"))
    train_y = read_idx_labels(_find_idx_file(directory, "train-labels-idx1-ubyte"))
    val_x = read_idx_images(_find_idx_file(directory, "t10k-images-idx3-ubyte"))
    val_y = read_idx_labels(_find_idx_file(directory, "t10k-labels-idx1-ubyte"))
    if train_x.shape[0] != train_y.shape[0] or val_x.shape[0] != val_y.shape[0]:
        raise DatasetError("image/label counts disagree")
    if train_size is not None:
        train_x, train_y = train_x[:train_size], train_y[:train_size]
    if val_size is not None:
        val_x, val_y = val_x[:val_size], val_y[:val_size]
    inputs = np.concatenate([train_x, val_x])[:, None, :, :]  # (N, 1, H, W)
    labels = np.concatenate([train_y, val_y])
    n_train = train_x.shape[0]
    return Dataset(
        inputs=inputs, labels=labels,
        train_idx=np.arange(n_train), val_idx=np.arange(n_train, inputs.shape[0]),
        num_classes=10, meta={"split": "canonical"},
    )


def _is_float(value: str) -> bool:
    try:
        float(value)
        return True
    except ValueError:
        return False


def load_csv(path, label_column: Optional[str] = None, val_fraction: float = 0.2,
             split_seed: int = 0) -> Dataset:
    """Tabular CSV with a header row.

    The label column is `label_column`, a column literally named
    "label", or else the last column.  Categorical columns are one-hot
    encoded with categories fitted on the train split; a category seen
    only at validation time encodes as all-zeros and bumps the
    unknown_category_count meta counter.  Continuous columns are z-score
    standardized with train-split statistics.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header:
                raise DatasetError(f"{path}: empty CSV")
            header = [h.strip() for h in header]
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise DatasetError(f"{path}: ragged row at line {lineno} "
                                       f"({len(row)} fields, expected {len(header)})")
                rows.append([v.strip() for v in row])
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise DatasetError(f"{path}: no data rows")

    if label_column is None:
        lowered = [h.lower() for h in header]
        label_i = lowered.index("label") if "label" in lowered else len(header) - 1
    else:
        if label_column not in header:
            raise DatasetError(f"{path}: no column named {label_column!r}")
        label_i = header.index(label_column)
    feature_is = [i for i in range(len(header)) if i != label_i]

    classes = sorted({row[label_i] for row in rows})
    class_to_idx = {c: k for k, c in enumerate(classes)}
    labels = np.array([class_to_idx[row[label_i]] for row in rows], dtype=np.int64)

    n = len(rows)
    perm = stream(split_seed, "split").permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    train_set = set(train_idx.tolist())

    continuous = {i: all(_is_float(row[i]) for row in rows) for i in feature_is}
    unknown_count = 0
    blocks = []
    for i in feature_is:
        col = [row[i] for row in rows]
        if continuous[i]:
            vals = np.array([float(v) for v in col])
            train_vals = vals[train_idx]
            mu = train_vals.mean()
            sd = train_vals.std()
            if sd == 0.0:
                sd = 1.0
            blocks.append(((vals - mu) / sd)[:, None])
        else:
            cats = sorted({col[j] for j in range(n) if j in train_set})
            cat_to_idx = {c: k for k, c in enumerate(cats)}
            block = np.zeros((n, len(cats)))
            for j, v in enumerate(col):
                k = cat_to_idx.get(v)
                if k is None:
                    unknown_count += 1  # unseen at train time: all-zeros row
                else:
                    block[j, k] = 1.0
            blocks.append(block)
    inputs = np.concatenate(blocks, axis=1)

    return Dataset(
        inputs=inputs, labels=labels, train_idx=train_idx, val_idx=val_idx,
        num_classes=len(classes),
        meta={"split": f"random-{1 - val_fraction:.2f}/{val_fraction:.2f}-seed{split_seed}",
              "unknown_category_count": unknown_count,
              "feature_dim": int(inputs.shape[1])},
    )


def two_moons(n: int, seed: int, noise: float = 0.1) -> tuple:
    rng = stream(seed, "data")
    n_up = n // 2
    n_down = n - n_up
    t_up = np.linspace(0.0, np.pi, n_up)
    t_down = np.linspace(0.0, np.pi, n_down)
    x = np.concatenate([
        np.stack([np.cos(t_up), np.sin(t_up)], axis=1),
        np.stack([1.0 - np.cos(t_down), 0.5 - np.sin(t_down)], axis=1),
    ])
    x += noise * rng.standard_normal(x.shape)
    y = np.concatenate([np.zeros(n_up, dtype=np.int64), np.ones(n_down, dtype=np.int64)])
    return x, y, 2


def gaussian_blobs(n: int, seed: int, centers: int = 3, spread: float = 0.8) -> tuple:
    rng = stream(seed, "data")
    mus = rng.uniform(-5.0, 5.0, size=(centers, 2))
    y = rng.integers(0, centers, size=n)
    x = mus[y] + spread * rng.standard_normal((n, 2))
    return x, y.astype(np.int64), centers


def xor_grid(n: int, seed: int, jitter: float = 0.05) -> tuple:
    rng = stream(seed, "data")
    side = int(np.ceil(np.sqrt(n)))
    axis = np.linspace(-1.0, 1.0, side + 2)[1:-1]  # keep off the axes
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)[:n]
    labels = ((pts[:, 0] > 0) ^ (pts[:, 1] > 0)).astype(np.int64)
    pts = pts + jitter * rng.standard_normal(pts.shape)
    return pts, labels, 2


# 7-segment encodings: (top, top-right, bottom-right, bottom, bottom-left,
# top-left, middle) per digit.
_SEGMENTS = {
    0: "ABCDEF", 1: "BC", 2: "ABGED", 3: "ABGCD", 4: "FGBC",
    5: "AFGCD", 6: "AFGECD", 7: "ABC", 8: "ABCDEFG", 9: "ABCDFG",
}
_SEGMENT_BOXES = {
    "A": (4, 7, 8, 20), "B": (4, 15, 17, 20), "C": (13, 24, 17, 20),
    "D": (21, 24, 8, 20), "E": (13, 24, 8, 11), "F": (4, 15, 8, 11),
    "G": (12, 15, 8, 20),
}


def _digit_templates() -> np.ndarray:
    templates = np.zeros((10, 28, 28))
    for d, segs in _SEGMENTS.items():
        for s in segs:
            r0, r1, c0, c1 = _SEGMENT_BOXES[s]
            templates[d, r0:r1, c0:c1] = 1.0
    return templates


def synthetic_digits(n: int, seed: int, noise: float = 0.2, max_shift: int = 3,
                     texture: float = 0.06, label_noise: float = 0.05) -> tuple:
    """Procedural 28x28 ten-class digit glyphs (seven-segment style).

    Each sample is a class template with a random integer shift,
    per-sample contrast, Gaussian stroke jitter, and a faint positive
    background texture (scanned-paper grain).  A `label_noise` fraction
    of labels is resampled uniformly so the task keeps an irreducible
    error floor.  A deterministic desk-scale stand-in for digit image
    data.
    """
    rng = stream(seed, "data")
    templates = _digit_templates()
    labels = rng.integers(0, 10, size=n).astype(np.int64)
    shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
    contrast = rng.uniform(0.6, 1.0, size=n)
    stroke_noise = noise * rng.standard_normal((n, 28, 28))
    grain = texture * np.abs(rng.standard_normal((n, 28, 28)))
    images = np.empty((n, 28, 28))
    for i in range(n):
        glyph = templates[labels[i]]
        img = glyph * (contrast[i] + stroke_noise[i]) + (1.0 - glyph) * grain[i]
        dy, dx = shifts[i]
        images[i] = np.roll(np.roll(img, dy, axis=0), dx, axis=1)
    np.clip(images, 0.0, 1.0, out=images)
    targets = labels.copy()
    if label_noise > 0:
        flip = rng.random(n) < label_noise
        targets[flip] = rng.integers(0, 10, size=int(flip.sum()))
    return images[:, None, :, :], targets, 10


def load_dataset(kind: str, path: Optional[str] = None, train_size: Optional[int] = None,
                 val_size: Optional[int] = None, seed: int = 0, **options) -> Dataset:
    """Load or generate a dataset by kind.

    For synthetic kinds, train_size/val_size default to 800/200 and the
    generator stream is derived from `seed`.
    """
    if kind == "mnist":
        if path is None:
            raise DatasetError("mnist dataset requires a path to the IDX directory")
        return load_mnist(path, train_size, val_size)
    if kind == "csv":
        if path is None:
            raise DatasetError("csv dataset requires a file path")
        ds = load_csv(path, **options)
        if train_size is not None:
            ds.train_idx = ds.train_idx[:train_size]
        if val_size is not None:
            ds.val_idx = ds.val_idx[:val_size]
        return ds
    if kind in SYNTHETIC_KINDS:
        n_train = train_size if train_size is not None else 800
        n_val = val_size if val_size is not None else 200
        n = n_train + n_val
        gen = {"two_moons": two_moons, "blobs": gaussian_blobs,
               "xor_grid": xor_grid, "synthetic_digits": synthetic_digits}[kind]
        x, y, k = gen(n, seed, **options)
        return Dataset(
            inputs=np.asarray(x, dtype=np.float64), labels=y,
            train_idx=np.arange(n_train), val_idx=np.arange(n_train, n),
            num_classes=k, meta={"split": f"generated-{n_train}/{n_val}-seed{seed}"},
        )
    raise DatasetError(f"unknown dataset kind {kind!r}; known: {', '.join(DATASET_KINDS)}")
