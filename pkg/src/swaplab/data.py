"""Datasets, synthetic generators, file loaders and per-epoch batch plans.

File formats
------------
CSV
    One header row, then one row per sample: numeric feature columns followed
    by a final integer label column. Floats are written with ``repr`` so a
    save/load round trip is exact.
IDX
    The classic big-endian layout: two zero bytes, a dtype code, the number of
    dimensions, one uint32 per dimension, then the raw array. Image files are
    flattened to ``N x prod(dims[1:])`` features. ``.gz`` files are
    decompressed transparently.

Provenance hashes are SHA-256 over the raw file bytes (compressed bytes for
``.gz`` inputs).
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .errors import ContractError, ParseError, SchemaError
from .nn import Batch


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    provenance: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ContractError(f"features must be 2-D, got shape {x.shape}")
        if x.shape[0] < 1:
            raise ContractError("dataset must contain at least one sample")
        if y.shape != (x.shape[0],):
            raise ContractError("labels must be a vector with one entry per sample")
        if self.class_count < 2:
            raise ContractError("class_count must be >= 2")
        if y.min() < 0 or y.max() >= self.class_count:
            raise SchemaError(f"labels must lie in [0, {self.class_count})")
        if not np.isfinite(x).all():
            raise ContractError("features must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def batch(self, indices: np.ndarray) -> Batch:
        return Batch(self.features[indices], self.labels[indices])

    def subset(self, indices: np.ndarray, tag: str = "subset") -> "Dataset":
        prov = dict(self.provenance)
        prov["view"] = tag
        return Dataset(self.features[indices], self.labels[indices], self.class_count, prov)

    def same_content(self, other: "Dataset") -> bool:
        return (self.class_count == other.class_count
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))

    def fingerprint(self) -> str:
        """sha256 over class count, shape, float64-LE features, int64-LE labels."""
        h = hashlib.sha256()
        h.update(np.array([self.class_count, *self.features.shape], dtype="<i8").tobytes())
        h.update(self.features.astype("<f8").tobytes())
        h.update(self.labels.astype("<i8").tobytes())
        return h.hexdigest()


def dataset_fingerprint(data: Dataset) -> str:
    return data.fingerprint()


def _check_sizes(n: int, d: int, classes: int, noise: float):
    if classes < 2:
        raise ContractError("need at least 2 classes")
    if n < classes:
        raise ContractError(f"n={n} must be >= classes={classes}")
    if d < 1:
        raise ContractError("d must be >= 1")
    if noise < 0:
        raise ContractError("noise must be >= 0")


def _balanced_labels(n: int, classes: int) -> np.ndarray:
    return np.arange(n) % classes


def generate_synthetic(kind: str, n: int, d: int, classes: int, noise: float,
                       seed: int, spread: float = 1.0, turns: float = 1.5) -> Dataset:
    """``gaussian_blobs``: class centroids ``~ N(0, spread^2 I)``, samples are
    centroid plus ``N(0, noise^2 I)``. ``two_spirals``: one spiral arm per
    class in the first two coordinates (``d >= 2``; extra dimensions carry
    noise only)."""
    _check_sizes(n, d, classes, noise)
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, classes)
    if kind == "gaussian_blobs":
        centroids = rng.normal(0.0, spread, size=(classes, d))
        x = centroids[labels] + noise * rng.normal(size=(n, d))
    elif kind == "two_spirals":
        if d < 2:
            raise ContractError("two_spirals needs d >= 2")
        t = np.sqrt(rng.uniform(0.02, 1.0, size=n))
        angle = 2 * np.pi * turns * t + 2 * np.pi * labels / classes
        x = np.zeros((n, d))
        x[:, 0] = t * np.cos(angle) * spread
        x[:, 1] = t * np.sin(angle) * spread
        x += noise * rng.normal(size=(n, d))
    else:
        raise ContractError(f"unknown synthetic kind {kind!r}")
    order = rng.permutation(n)
    prov = {"source": "synthetic", "kind": kind, "n": n, "d": d, "classes": classes,
            "noise": noise, "seed": seed, "spread": spread}
    if kind == "two_spirals":
        prov["turns"] = turns
    return Dataset(x[order], labels[order], classes, prov)


def train_test_split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ContractError("test_fraction must lie in (0, 1)")
    n = len(data)
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise ContractError(f"split of {n} samples leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(perm[n_test:]), "train"), data.subset(np.sort(perm[:n_test]), "test")


def standardize(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Shift/scale every dataset by the training split's per-feature moments.
    Constant features are centred but not scaled."""
    mu = train.features.mean(axis=0)
    sd = train.features.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    out = []
    for ds in (train, *others):
        prov = dict(ds.provenance)
        prov["standardized"] = True
        out.append(Dataset((ds.features - mu) / sd, ds.labels, ds.class_count, prov))
    return out


# --- CSV -------------------------------------------------------------------

def save_csv(data: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(data.dim)] + ["label"])
        for row, label in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def _sha256(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def load_csv(path: str | Path, class_count: int | None = None) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    reader = csv.reader(io.StringIO(raw.decode("utf-8")))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file", line=1) from None
    if len(header) < 2:
        raise ParseError("header needs at least one feature column and a label column", line=1)
    rows, labels = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {len(row)}", line=lineno)
        try:
            feats = [float(v) for v in row[:-1]]
        except ValueError as err:
            raise ParseError(f"non-numeric feature ({err})", line=lineno) from None
        if not all(math.isfinite(v) for v in feats):
            raise ParseError("non-finite feature", line=lineno)
        try:
            label = int(row[-1])
        except ValueError:
            raise ParseError(f"label {row[-1]!r} is not an integer", line=lineno) from None
        if label < 0 or (class_count is not None and label >= class_count):
            raise SchemaError(f"label {label} out of range", line=lineno)
        rows.append(feats)
        labels.append(label)
    if not rows:
        raise ParseError("no data rows", line=2)
    y = np.array(labels, dtype=np.int64)
    k = class_count if class_count is not None else max(int(y.max()) + 1, 2)
    prov = {"source": "csv", "path": str(path), "sha256": _sha256(raw)}
    return Dataset(np.array(rows, dtype=np.float64), y, k, prov)


# --- IDX -------------------------------------------------------------------

_IDX_DTYPES = {
    0x08: np.dtype(">u1"), 0x09: np.dtype(">i1"), 0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8"),
}


def _read_maybe_gz(path: Path) -> tuple[bytes, bytes]:
    raw = path.read_bytes()
    body = gzip.decompress(raw) if path.suffix == ".gz" else raw
    return raw, body


def parse_idx(body: bytes) -> np.ndarray:
    if len(body) < 4 or body[0] != 0 or body[1] != 0:
        raise ParseError("bad IDX magic number")
    code, ndim = body[2], body[3]
    if code not in _IDX_DTYPES:
        raise ParseError(f"unknown IDX dtype code 0x{code:02x}")
    if ndim < 1 or len(body) < 4 + 4 * ndim:
        raise ParseError("truncated IDX header")
    dims = struct.unpack(f">{ndim}I", body[4:4 + 4 * ndim])
    dtype = _IDX_DTYPES[code]
    count = int(np.prod(dims))
    offset = 4 + 4 * ndim
    if len(body) != offset + count * dtype.itemsize:
        raise ParseError(f"IDX payload has {len(body) - offset} bytes, header implies "
                         f"{count * dtype.itemsize}")
    return np.frombuffer(body, dtype=dtype, count=count, offset=offset).reshape(dims)


def write_idx(array: np.ndarray, path: str | Path) -> None:
    codes = {v: k for k, v in _IDX_DTYPES.items()}
    arr = np.asarray(array)
    be = arr.dtype.newbyteorder(">") if arr.dtype.itemsize > 1 else arr.dtype
    if np.dtype(be) not in codes:
        raise ContractError(f"dtype {arr.dtype} has no IDX code")
    header = bytes([0, 0, codes[np.dtype(be)], arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    payload = header + arr.astype(be).tobytes()
    path = Path(path)
    path.write_bytes(gzip.compress(payload, mtime=0) if path.suffix == ".gz" else payload)


def load_idx(images_path: str | Path, labels_path: str | Path,
             class_count: int | None = None) -> Dataset:
    images_path, labels_path = Path(images_path), Path(labels_path)
    raw_x, body_x = _read_maybe_gz(images_path)
    raw_y, body_y = _read_maybe_gz(labels_path)
    images = parse_idx(body_x)
    labels = parse_idx(body_y)
    if labels.ndim != 1:
        raise SchemaError("label file must be one-dimensional")
    if images.shape[0] != labels.shape[0]:
        raise SchemaError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    y = labels.astype(np.int64)
    k = class_count if class_count is not None else max(int(y.max()) + 1, 2)
    if y.min() < 0 or y.max() >= k:
        raise SchemaError(f"labels must lie in [0, {k})")
    x = images.reshape(images.shape[0], -1).astype(np.float64)
    prov = {"source": "idx", "images": str(images_path), "labels": str(labels_path),
            "sha256": _sha256(raw_x + raw_y)}
    return Dataset(x, y, k, prov)


# --- batch plans -------------------------------------------------------------

@dataclass(frozen=True)
class BatchPlan:
    """One epoch's ordering. With ``shards`` set, the permutation is cut into
    full ``batch_size`` super-batches (a trailing partial one is dropped) and
    each super-batch is cut into ``shards`` contiguous equal slices."""

    permutation: np.ndarray
    batch_size: int
    shards: int | None = None
    min_batch: int = 1

    @property
    def n_batches(self) -> int:
        n = len(self.permutation)
        full, rest = divmod(n, self.batch_size)
        if self.shards is not None:
            return full
        return full + (1 if rest >= max(self.min_batch, 1) else 0)

    def __len__(self) -> int:
        return self.n_batches

    def batch(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n_batches:
            raise IndexError(i)
        return self.permutation[i * self.batch_size:(i + 1) * self.batch_size]

    def shard(self, i: int, worker: int) -> np.ndarray:
        if self.shards is None:
            raise ContractError("plan was built without shards")
        if not 0 <= worker < self.shards:
            raise ContractError(f"worker {worker} outside [0, {self.shards})")
        width = self.batch_size // self.shards
        return self.batch(i)[worker * width:(worker + 1) * width]

    def __iter__(self) -> Iterator[np.ndarray]:
        return (self.batch(i) for i in range(self.n_batches))

    def worker_batches(self, worker: int) -> Iterator[np.ndarray]:
        return (self.shard(i, worker) for i in range(self.n_batches))


def epoch_batches(data: Dataset | int, batch_size: int, rng: np.random.Generator,
                  shards: int | None = None, min_batch: int = 1) -> BatchPlan:
    """Draw a fresh permutation from ``rng`` and wrap it in a :class:`BatchPlan`.

    ``min_batch`` drops an unsharded trailing batch smaller than it (batch
    norm cannot train on a single sample)."""
    n = data if isinstance(data, int) else len(data)
    if not 1 <= batch_size <= n:
        raise ContractError(f"batch_size={batch_size} must lie in [1, {n}]")
    if shards is not None and (shards < 1 or batch_size % shards):
        raise ContractError(f"batch_size={batch_size} not divisible into {shards} shards")
    return BatchPlan(rng.permutation(n), batch_size, shards, min_batch)

