"""Dataset loaders (IDX, CSV) and synthetic benchmarks with known important features."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import ContractError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetFormatError(ValueError):
    pass


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    image_shape: tuple | None = None
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None
    seed: int | None = None
    name: str = "dataset"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.X.shape[0] != self.y.shape[0]:
            raise ContractError(f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]}")
        if self.image_shape is not None:
            self.image_shape = tuple(self.image_shape)
            if int(np.prod(self.image_shape)) != self.X.shape[1]:
                raise ContractError(f"image shape {self.image_shape} does not match d={self.X.shape[1]}")

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def split(self, test_fraction: float, seed: int) -> "LabeledDataset":
        """Seeded disjoint train/test split covering all rows."""
        order = np.random.default_rng(seed).permutation(self.N)
        n_test = int(round(test_fraction * self.N))
        return replace(self, test_idx=np.sort(order[:n_test]), train_idx=np.sort(order[n_test:]), seed=seed)

    def subset(self, idx, name=None) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, X=self.X[idx], y=self.y[idx], train_idx=None, test_idx=None,
                       name=name or self.name)

    def train(self) -> "LabeledDataset":
        return self.subset(self.train_idx, f"{self.name}:train")

    def test(self) -> "LabeledDataset":
        return self.subset(self.test_idx, f"{self.name}:test")

    def manifest(self) -> dict:
        out = {"name": self.name, "N": self.N, "d": self.d, "k": self.y.shape[1],
               "image_shape": list(self.image_shape) if self.image_shape else None,
               "seed": self.seed, "metadata": self.metadata}
        if self.train_idx is not None:
            out["train_size"] = int(self.train_idx.size)
            out["test_size"] = int(self.test_idx.size)
        return out


def _onehot(labels, k=2):
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels.astype(np.int64)] = 1.0
    return out


def gen_single_informative(N: int, p: int, seed: int) -> LabeledDataset:
    """Uniform features; the class is ``x_0 > 0.5``."""
    if p < 2:
        raise ContractError("need p >= 2")
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(N, p))
    labels = (X[:, 0] > 0.5).astype(np.int64)
    return LabeledDataset(X, _onehot(labels), seed=seed, name="single_informative",
                          metadata={"generator": "single_informative", "p": p})


def gen_additive_logit(N: int, p: int, weights, seed: int) -> LabeledDataset:
    """Labels drawn from sigmoid(w . x + b), with b centring the mean logit at zero."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (p,):
        raise ContractError(f"weights must have length {p}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(N, p))
    b = -0.5 * float(w.sum())
    prob = 1.0 / (1.0 + np.exp(-(X @ w + b)))
    labels = (rng.uniform(size=N) < prob).astype(np.int64)
    return LabeledDataset(X, _onehot(labels), seed=seed, name="additive_logit",
                          metadata={"generator": "additive_logit", "weights": w.tolist(), "bias": b})


BLOB = 3


def gen_patch_images(N: int, h: int = 28, w: int = 28, seed: int = 0) -> LabeledDataset:
    """Noise images with one bright 3x3 blob; class 0 = blob in the left half, 1 = right half.

    Background pixels are uniform in [0, 0.3], blob pixels uniform in [0.8, 1].
    """
    if h < 8 or w < 8:
        raise ContractError("patch images need h, w >= 8")
    rng = np.random.default_rng(seed)
    imgs = rng.uniform(0.0, 0.3, size=(N, h, w))
    labels = rng.integers(0, 2, size=N)
    half = w // 2
    rows = rng.integers(0, h - BLOB + 1, size=N)
    cols = np.where(labels == 0, rng.integers(0, half - BLOB + 1, size=N),
                    rng.integers(half, w - BLOB + 1, size=N))
    blob = rng.uniform(0.8, 1.0, size=(N, BLOB, BLOB))
    for n in range(N):
        imgs[n, rows[n]:rows[n] + BLOB, cols[n]:cols[n] + BLOB] = blob[n]
    meta = {"generator": "patch_images", "blob_rows": rows.tolist(), "blob_cols": cols.tolist()}
    return LabeledDataset(imgs.reshape(N, h * w), _onehot(labels), image_shape=(h, w), seed=seed,
                          name="patch_images", metadata=meta)


# --- IDX ----------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"IDX file not found: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(data: bytes, magic: int, ndim: int, path) -> np.ndarray:
    if len(data) < 4 + 4 * ndim:
        raise DatasetFormatError(f"{path}: truncated header ({len(data)} bytes)")
    observed = struct.unpack(">I", data[:4])[0]
    if observed != magic:
        raise DatasetFormatError(f"{path}: bad magic 0x{observed:08x} (expected 0x{magic:08x})")
    dims = struct.unpack(">" + "I" * ndim, data[4:4 + 4 * ndim])
    expected = int(np.prod(dims))
    payload = data[4 + 4 * ndim:]
    if len(payload) < expected:
        raise DatasetFormatError(f"{path}: truncated payload, expected {expected} bytes, found {len(payload)}")
    return np.frombuffer(payload[:expected], dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Unsigned-byte IDX images (magic 2051) and labels (2049); pixels scaled to [0, 1].

    ``y`` holds the raw integer labels as one column; ``filter_classes``
    turns them into one-hot targets.
    """
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    n, h, w = images.shape
    X = images.reshape(n, h * w).astype(np.float64) / 255.0
    return LabeledDataset(X, labels.astype(np.float64)[:, None], image_shape=(h, w), name="idx",
                          metadata={"images": str(images_path), "labels": str(labels_path)})


def filter_classes(ds: LabeledDataset, class_a, class_b) -> LabeledDataset:
    """Keep two raw labels, in order, relabelled a -> [1, 0] and b -> [0, 1]."""
    labels = ds.y[:, 0]
    keep = np.flatnonzero((labels == class_a) | (labels == class_b))
    if keep.size == 0:
        raise ContractError(f"no rows with labels {class_a} or {class_b}")
    y = _onehot((labels[keep] == class_b).astype(np.int64))
    meta = dict(ds.metadata, classes=[class_a, class_b])
    return replace(ds, X=ds.X[keep], y=y, train_idx=None, test_idx=None,
                   name=f"{ds.name}:{class_a}v{class_b}", metadata=meta)


def write_idx(images_path, labels_path, images_u8, labels_u8) -> None:
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels_u8 = np.asarray(labels_u8, dtype=np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images_u8.shape) + images_u8.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels_u8.size) + labels_u8.tobytes())


# --- CSV ----------------------------------------------------------------------

def load_csv(path, target_cols: int) -> LabeledDataset:
    """Numeric CSV with a header row; the last ``target_cols`` columns are targets."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"CSV file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DatasetFormatError(f"{path}: no data rows")
    width = len(rows[0])
    if not 0 < target_cols < width:
        raise DatasetFormatError(f"{path}: target_cols={target_cols} incompatible with {width} columns")
    values = []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != width:
            raise DatasetFormatError(f"{path}: row {lineno} has {len(r)} cells, expected {width}")
        try:
            values.append([float(v) for v in r])
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: row {lineno}: {exc}") from exc
    arr = np.array(values, dtype=np.float64)
    return LabeledDataset(arr[:, :-target_cols], arr[:, -target_cols:], name=path.stem,
                          metadata={"path": str(path), "columns": rows[0]})


def save_csv(ds: LabeledDataset, path, feature_names=None, target_names=None) -> None:
    fn = feature_names or [f"x{i}" for i in range(ds.d)]
    tn = target_names or [f"y{i}" for i in range(ds.y.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*fn, *tn])
        for x, y in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in (*x, *y)])
