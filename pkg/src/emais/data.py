"""Datasets: CSV ingestion/export and a synthetic Gaussian-mixture generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    """Feature rows plus class indices (single-label) or a 0/1 matrix (multi-label)."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    multilabel: bool = False
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DatasetError("features must be a non-empty (M, D) array")
        M = self.features.shape[0]
        if self.multilabel:
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if self.labels.shape != (M, self.n_classes):
                raise DatasetError("multi-label targets must be an (M, C) array")
            if not np.all((self.labels == 0) | (self.labels == 1)):
                raise DatasetError("multi-label targets must be 0/1")
        else:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if self.labels.shape != (M,):
                raise DatasetError("need one class label per row")
            if np.any(self.labels < 0) or np.any(self.labels >= self.n_classes):
                raise DatasetError(f"class labels must lie in [0, {self.n_classes})")

    @property
    def M(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def loss(self) -> str:
        return "bce" if self.multilabel else "softmax_ce"


def load_csv_dataset(path, n_classes: int | None = None, split: str = "train") -> Dataset:
    """Read ``label,f0,f1,...`` (single-label) or ``labels,f0,...`` (multi-label).

    Multi-label rows list their positive classes separated by ``|``; an empty
    field means no positive class. ``n_classes`` defaults to one more than
    the largest class id seen.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if not header or header[0] not in ("label", "labels"):
            raise DatasetError(f"{path}:1: header must start with 'label' or 'labels'")
        multilabel = header[0] == "labels"
        width = len(header)
        feats, labs = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DatasetError(
                    f"{path}:{lineno}: expected {width} fields, found {len(row)}"
                )
            try:
                feats.append([float(v) for v in row[1:]])
                if multilabel:
                    labs.append([int(v) for v in row[0].split("|") if v != ""])
                else:
                    labs.append(int(row[0]))
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    if not feats:
        raise DatasetError(f"{path}: no data rows")
    if multilabel:
        top = max((max(l) for l in labs if l), default=-1)
        C = n_classes if n_classes is not None else top + 1
        if top >= C:
            raise DatasetError(f"{path}: class id {top} >= n_classes={C}")
        Y = np.zeros((len(labs), C))
        for k, l in enumerate(labs):
            Y[k, l] = 1.0
        return Dataset(np.array(feats), Y, C, True, split)
    y = np.array(labs, dtype=np.int64)
    C = n_classes if n_classes is not None else int(y.max()) + 1
    return Dataset(np.array(feats), y, C, False, split)


def save_csv_dataset(ds: Dataset, path) -> None:
    """Write a dataset in the format :func:`load_csv_dataset` reads (lossless floats)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        first = "labels" if ds.multilabel else "label"
        w.writerow([first] + [f"f{j}" for j in range(ds.dim)])
        for k in range(ds.M):
            if ds.multilabel:
                lab = "|".join(str(c) for c in np.flatnonzero(ds.labels[k]))
            else:
                lab = str(int(ds.labels[k]))
            w.writerow([lab] + [repr(float(v)) for v in ds.features[k]])


def synthesize_gaussian_mixture(classes: int, per_class: int, dim: int,
                                separation: float, seed: int,
                                test_fraction: float = 0.2):
    """Unit-covariance Gaussian classes with means ``separation`` apart.

    With ``dim >= classes`` the means sit on a scaled orthonormal frame, so
    every pair of class means is exactly ``separation`` apart; otherwise they
    are random directions at radius ``separation / 2``. The pooled samples
    are shuffled and split into train and test sets.
    """
    if classes < 2 or per_class < 1:
        raise ValueError("need classes >= 2 and per_class >= 1")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    rng = np.random.default_rng(seed)
    if dim >= classes:
        Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        means = Q[:, :classes].T * (separation / math.sqrt(2.0))
    else:
        dirs = rng.normal(size=(classes, dim))
        means = dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * (separation / 2.0)
    y = np.repeat(np.arange(classes), per_class)
    X = means[y] + rng.normal(size=(y.size, dim))
    order = rng.permutation(y.size)
    X, y = X[order], y[order]
    n_test = int(round(test_fraction * y.size))
    n_train = y.size - n_test
    if n_test < 1 or n_train < 1:
        raise ValueError("test_fraction leaves an empty train or test split")
    train = Dataset(X[:n_train], y[:n_train], classes, False, "train")
    test = Dataset(X[n_train:], y[n_train:], classes, False, "test")
    return train, test
