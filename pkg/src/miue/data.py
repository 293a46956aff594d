"""Synthetic Gaussian-blob datasets and the CSV formats for datasets and poisons."""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .rng import RngState, sample_gaussian


class ParseError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs must be N x D with one label per row")
        if self.inputs.shape[0] < 1:
            raise ValueError("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass
class BlobSpec:
    """Gaussian class clusters.

    When ``means`` is omitted the class means form a regular simplex with
    pairwise distance ``separation`` in a random orientation of R^dim, so
    the class signal is spread over all coordinates.
    """

    num_classes: int = 3
    dim: int = 20
    per_class: int = 200
    separation: float = 4.0
    means: np.ndarray | None = None
    cov: np.ndarray | None = None
    class_covs: list | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.num_classes < 2 or self.dim < 1 or self.per_class < 1:
            raise ValueError(f"invalid blob spec {self}")

    def class_means(self, rng: RngState) -> np.ndarray:
        if self.means is not None:
            means = np.asarray(self.means, dtype=np.float64)
        else:
            C, D = self.num_classes, self.dim
            simplex = np.eye(C) - 1.0 / C
            simplex *= self.separation / np.sqrt(2.0)
            if C <= D:
                q, _ = np.linalg.qr(rng.standard_normal((D, C)))
                means = simplex @ q.T
            else:
                means = rng.standard_normal((C, D))
                means *= self.separation / np.sqrt(2.0 * D)
        if means.shape != (self.num_classes, self.dim):
            raise ValueError(f"means must have shape {(self.num_classes, self.dim)}")
        for i in range(self.num_classes):
            for j in range(i):
                if np.array_equal(means[i], means[j]):
                    raise ValueError(f"class means {i} and {j} coincide")
        return means


def make_blobs(spec: BlobSpec, rng: RngState) -> tuple[Dataset, Dataset]:
    """Train/test blobs, standardized with the training statistics."""
    means = spec.class_means(rng.split("means"))
    xs_train, xs_test, ys_train, ys_test = [], [], [], []
    for c in range(spec.num_classes):
        if spec.class_covs is not None:
            cov = spec.class_covs[c]
        elif spec.cov is not None:
            cov = spec.cov
        else:
            cov = np.eye(spec.dim)
        pts = sample_gaussian(rng.split(f"class-{c}"), means[c], cov, 2 * spec.per_class)
        xs_train.append(pts[:spec.per_class])
        xs_test.append(pts[spec.per_class:])
        ys_train.append(np.full(spec.per_class, c))
        ys_test.append(np.full(spec.per_class, c))
    xtr, xte = np.vstack(xs_train), np.vstack(xs_test)
    mu = xtr.mean(axis=0)
    sd = xtr.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    train = Dataset((xtr - mu) / sd, np.concatenate(ys_train), spec.num_classes, "blobs-train")
    test = Dataset((xte - mu) / sd, np.concatenate(ys_test), spec.num_classes, "blobs-test")
    return train, test


# ---------------------------------------------------------------------------
# CSV I/O

def _atomic_write_rows(path, header: list[str], rows) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_table(path, prefix: str, with_label: bool):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError(f"{path}: missing header")
        n_feat = len(header) - (1 if with_label else 0)
        expected = [f"{prefix}_{i}" for i in range(n_feat)] + (["label"] if with_label else [])
        if n_feat < 1 or header != expected:
            raise ParseError(f"{path}: line 1: malformed header, expected {prefix}_0..{prefix}_{{D-1}}"
                             + (",label" if with_label else ""))
        values, labels = [], []
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                values.append([float(v) for v in row[:n_feat]])
                if with_label:
                    labels.append(int(row[-1]))
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
    return n_feat, values, labels


def save_dataset(ds: Dataset, path) -> None:
    header = [f"feat_{i}" for i in range(ds.dim)] + ["label"]
    rows = ([repr(float(v)) for v in x] + [str(int(y))] for x, y in zip(ds.inputs, ds.labels))
    _atomic_write_rows(path, header, rows)


def load_dataset(path, num_classes: int | None = None, name: str | None = None) -> Dataset:
    n_feat, values, labels = _read_table(path, "feat", with_label=True)
    if not values:
        raise ParseError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    C = num_classes if num_classes is not None else int(labels_arr.max()) + 1
    bad = np.flatnonzero((labels_arr < 0) | (labels_arr >= C))
    if bad.size:
        raise ParseError(f"{path}: line {bad[0] + 2}: label {labels_arr[bad[0]]} outside [0, {C})")
    return Dataset(np.asarray(values).reshape(-1, n_feat), labels_arr, C, name or os.path.basename(path))


def save_poison(deltas: np.ndarray, path) -> None:
    deltas = np.asarray(deltas, dtype=np.float64)
    header = [f"delta_{i}" for i in range(deltas.shape[1])]
    _atomic_write_rows(path, header, ([repr(float(v)) for v in row] for row in deltas))


def load_poison(path) -> np.ndarray:
    n_feat, values, _ = _read_table(path, "delta", with_label=False)
    return np.asarray(values, dtype=np.float64).reshape(-1, n_feat)


def load_matrix(path) -> np.ndarray:
    """Numeric CSV with a header row of arbitrary column names (used by estimate-mi)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError(f"{path}: missing header")
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: line {reader.line_num}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(f"{path}: line {reader.line_num}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.asarray(rows)
