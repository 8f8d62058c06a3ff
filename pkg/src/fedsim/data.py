"""Datasets, label-skew partitioning across clients, and file loaders."""
from __future__ import annotations

import csv
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument, PartitionFailure
from .numcore import as_generator, dirichlet_sample


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2:
            raise InvalidArgument(f"features must be 2-D, got shape {self.x.shape}")
        if self.y.shape != (self.x.shape[0],):
            raise InvalidArgument(f"{self.x.shape[0]} feature rows but label shape {self.y.shape}")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise InvalidArgument(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return self.y.size

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.x[idx], self.y[idx], self.n_classes)

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    @staticmethod
    def concat(parts, n_classes=None) -> "Dataset":
        parts = list(parts)
        if n_classes is None:
            n_classes = parts[0].n_classes
        return Dataset(
            np.concatenate([p.x for p in parts]), np.concatenate([p.y for p in parts]), n_classes
        )


@dataclass
class ClientData:
    train: Dataset
    val: Dataset
    test: Dataset
    unlabeled: np.ndarray | None = None


def generate_synthetic(
    n_classes=10, n_features=20, n_samples=20_000, class_sep=1.0, noise=1.0, rng=None
) -> Dataset:
    """Gaussian class clusters.

    Class means are drawn once from N(0, class_sep^2 / n_features * I), so
    ``class_sep`` is the expected norm of a class mean; labels are uniform
    over classes; each sample is its class mean plus N(0, noise^2 I).
    """
    if n_classes < 2 or n_features < 1 or n_samples < n_classes:
        raise InvalidArgument(
            f"need n_classes >= 2, n_features >= 1, n_samples >= n_classes "
            f"(got {n_classes}, {n_features}, {n_samples})"
        )
    if class_sep < 0 or noise < 0:
        raise InvalidArgument("class_sep and noise must be nonnegative")
    gen = as_generator(rng)
    means = gen.normal(0.0, 1.0, size=(n_classes, n_features)) * (class_sep / math.sqrt(n_features))
    y = gen.integers(0, n_classes, size=n_samples)
    x = means[y] + noise * gen.normal(0.0, 1.0, size=(n_samples, n_features))
    return Dataset(x, y, n_classes)


# ---------------------------------------------------------------------------
# partitioning


@dataclass
class PartitionPlan:
    """Per-client train/test index lists and the class proportions behind them.

    ``proportions[c]`` is the single Dirichlet draw that allocated both the
    train and the test samples of class ``c``.
    """

    train: list
    test: list
    proportions: np.ndarray
    alpha: float
    attempts: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def n_clients(self) -> int:
        return len(self.train)

    def train_sizes(self) -> np.ndarray:
        return np.array([len(i) for i in self.train])

    def to_json(self) -> str:
        doc = {
            "schema_version": 1,
            "alpha": self.alpha,
            "attempts": self.attempts,
            "proportions": self.proportions.tolist(),
            "train": [np.asarray(i).tolist() for i in self.train],
            "test": [np.asarray(i).tolist() for i in self.test],
            "meta": self.meta,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PartitionPlan":
        doc = json.loads(text)
        return cls(
            [np.array(i, dtype=np.int64) for i in doc["train"]],
            [np.array(i, dtype=np.int64) for i in doc["test"]],
            np.array(doc["proportions"], dtype=np.float64),
            doc["alpha"],
            doc.get("attempts", 1),
            doc.get("meta", {}),
        )


def _allocate(order_by_class, counts) -> list:
    n_clients = counts.shape[1]
    out = [[] for _ in range(n_clients)]
    for idx, row in zip(order_by_class, counts):
        bounds = np.concatenate([[0], np.cumsum(row)])
        for i in range(n_clients):
            out[i].append(idx[bounds[i] : bounds[i + 1]])
    return [np.sort(np.concatenate(parts)).astype(np.int64) for parts in out]


def partition_dirichlet(
    train: Dataset,
    test: Dataset | None,
    n_clients: int,
    alpha: float,
    rng,
    min_samples: int = 1,
    max_retries: int = 100,
) -> PartitionPlan:
    """Split train and test data across clients with Dirichlet label skew.

    For every class one proportion vector ``p_c ~ Dir(alpha)`` is drawn; the
    class's (once-shuffled) train samples and its test samples are each
    allocated to clients by a multinomial draw with probabilities ``p_c``.
    If some client ends up with fewer than ``min_samples`` training samples,
    every class is redrawn, up to ``max_retries`` times.
    """
    if n_clients < 1:
        raise InvalidArgument(f"need at least one client, got {n_clients}")
    if not alpha > 0:
        raise InvalidArgument(f"alpha_label must be positive, got {alpha}")
    gen = as_generator(rng)
    C = train.n_classes
    train_order = [gen.permutation(np.flatnonzero(train.y == c)) for c in range(C)]
    test_order = (
        [gen.permutation(np.flatnonzero(test.y == c)) for c in range(C)] if test is not None else None
    )
    if n_clients == 1:
        props = np.ones((C, 1))
        tr = [np.arange(len(train), dtype=np.int64)]
        te = [np.arange(len(test), dtype=np.int64)] if test is not None else [np.zeros(0, np.int64)]
        return PartitionPlan(tr, te, props, float(alpha))

    worst = None
    for attempt in range(1, max_retries + 1):
        props = np.stack([dirichlet_sample(alpha, n_clients, gen) for _ in range(C)])
        counts = np.stack([gen.multinomial(len(idx), p) for idx, p in zip(train_order, props)])
        sizes = counts.sum(axis=0)
        if sizes.min() >= min_samples:
            break
        worst = int(sizes.min())
    else:
        raise PartitionFailure(
            f"could not give every client {min_samples} training samples in {max_retries} draws",
            dict(alpha=alpha, n_clients=n_clients, min_samples=min_samples, smallest_last=worst,
                 n_train=len(train)),
        )
    tr = _allocate(train_order, counts)
    if test is not None:
        test_counts = np.stack([gen.multinomial(len(idx), p) for idx, p in zip(test_order, props)])
        te = _allocate(test_order, test_counts)
    else:
        te = [np.zeros(0, np.int64) for _ in range(n_clients)]
    return PartitionPlan(tr, te, props, float(alpha), attempt)


def label_entropy(labels, n_classes) -> float:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes).astype(float)
    if counts.sum() == 0:
        return 0.0
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def mean_client_entropy(plan: PartitionPlan, data: Dataset) -> float:
    return float(np.mean([label_entropy(data.y[idx], data.n_classes) for idx in plan.train]))


# ---------------------------------------------------------------------------
# subsampling and splitting


def ratio_count(ratio: float, n: int) -> int:
    # round away representation error before flooring, e.g. 0.29 * 100
    return int(math.floor(round(ratio * n, 9)))


def subsample_ratio(data: Dataset, ratio: float, rng) -> Dataset:
    """Keep ``floor(ratio * N)`` records drawn uniformly without replacement."""
    if not 0 < ratio <= 1:
        raise InvalidArgument(f"data ratio must lie in (0, 1], got {ratio}")
    if ratio == 1:
        return data
    gen = as_generator(rng)
    keep = np.sort(gen.choice(len(data), size=ratio_count(ratio, len(data)), replace=False))
    return data.subset(keep)


def parse_ratio(ratio) -> tuple:
    """``"8:2"``, ``(8, 2)`` or ``0.8`` -> ``(train_part, val_part)``."""
    if isinstance(ratio, str):
        a, sep, b = ratio.partition(":")
        if not sep:
            raise InvalidArgument(f"ratio {ratio!r} is not of the form 'a:b'")
        return int(a), int(b)
    if isinstance(ratio, (tuple, list)):
        a, b = ratio
        return int(a), int(b)
    f = float(ratio)
    if not 0 < f <= 1:
        raise InvalidArgument(f"train fraction must lie in (0, 1], got {ratio}")
    return round(f * 1000), round((1 - f) * 1000)


def split_indices(n: int, ratio, rng) -> tuple:
    """Positions of the train and validation rows, each in ascending order.

    The validation side gets ``floor(n * b / (a + b))`` rows for ratio ``a:b``.
    """
    a, b = parse_ratio(ratio)
    if a < 0 or b < 0 or a + b == 0:
        raise InvalidArgument(f"invalid split ratio {ratio!r}")
    if n < 2:
        return np.arange(n), np.zeros(0, dtype=np.int64)
    n_val = n * b // (a + b)
    perm = as_generator(rng).permutation(n)
    return np.sort(perm[: n - n_val]), np.sort(perm[n - n_val :])


def split_train_val(data: Dataset, ratio, rng) -> tuple:
    """Random disjoint train/validation split; validation size is rounded down."""
    if len(data) < 2:
        warnings.warn(f"degenerate client with {len(data)} samples; validation split is empty", stacklevel=2)
    tr, va = split_indices(len(data), ratio, rng)
    return data.subset(tr), data.subset(va)


def extract_unlabeled(pool: Dataset, n: int, rng) -> tuple:
    """Remove ``n`` random records from ``pool`` and return their features.

    Returns ``(features, remaining_pool)``.
    """
    if n <= 0:
        return np.zeros((0, pool.n_features)), pool
    if n > len(pool):
        warnings.warn(f"asked for {n} unlabeled records but pool has {len(pool)}; taking all", stacklevel=2)
        n = len(pool)
    gen = as_generator(rng)
    chosen = np.zeros(len(pool), dtype=bool)
    chosen[gen.choice(len(pool), size=n, replace=False)] = True
    return pool.x[chosen].copy(), pool.subset(np.flatnonzero(~chosen))


# ---------------------------------------------------------------------------
# IDX files

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {dt.newbyteorder("=").kind + str(dt.itemsize): code for code, dt in _IDX_TYPES.items()}


def read_idx(path) -> np.ndarray:
    """Read an IDX file into an array of its declared shape and type."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError("IDX header truncated", offset=len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError("bad IDX magic: first two bytes must be zero", offset=0)
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise FormatError(f"unknown IDX data type 0x{code:02x}", offset=2)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError("IDX dimension table truncated", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = _IDX_TYPES[code]
    expected = header + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) < expected:
        raise FormatError(f"IDX payload truncated: expected {expected} bytes, found {len(raw)}", offset=len(raw))
    if len(raw) > expected:
        raise FormatError(f"{len(raw) - expected} trailing bytes after IDX payload", offset=expected)
    data = np.frombuffer(raw, dtype=dtype, offset=header, count=int(np.prod(dims, dtype=np.int64)))
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array) -> None:
    a = np.asarray(array)
    key = a.dtype.kind + str(a.dtype.itemsize)
    if key not in _IDX_CODES:
        raise InvalidArgument(f"IDX cannot store dtype {a.dtype}")
    code = _IDX_CODES[key]
    header = bytes([0, 0, code, a.ndim]) + struct.pack(f">{a.ndim}I", *a.shape)
    Path(path).write_bytes(header + a.astype(_IDX_TYPES[code]).tobytes())


def load_idx(images_path, labels_path, n_classes=None) -> Dataset:
    """Images flattened to rows; 8-bit unsigned pixels are scaled to [0, 1]."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise FormatError(f"label file must be one-dimensional, has {labels.ndim} dimensions", offset=3)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4)
    x = images.reshape(images.shape[0], -1)
    x = x / 255.0 if images.dtype == np.uint8 else x.astype(np.float64)
    y = labels.astype(np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1 if y.size else 1
    return Dataset(x, y, n_classes)


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    write_idx(images_path, dataset.x)
    write_idx(labels_path, dataset.y.astype(np.uint8 if dataset.n_classes <= 256 else np.int32))


# ---------------------------------------------------------------------------
# CSV files


def load_csv(path, n_classes=None) -> Dataset:
    """CSV with header ``label,f0,f1,...``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label":
            raise FormatError(f"{path}: first column must be 'label'")
        rows = [r for r in reader if r]
    if not rows:
        return Dataset(np.zeros((0, len(header) - 1)), np.zeros(0, np.int64), n_classes or 1)
    arr = np.array(rows, dtype=np.float64)
    y = arr[:, 0].astype(np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    return Dataset(arr[:, 1:], y, n_classes)


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{j}" for j in range(dataset.n_features)])
        for label, row in zip(dataset.y, dataset.x):
            w.writerow([int(label)] + [repr(float(v)) for v in row])
