"""Datasets: the 1-d toy generator, CSV ingestion and train/test splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np


class ParseError(ValueError):
    def __init__(self, row, column, message):
        super().__init__(f"row {row}, column {column!r}: {message}")
        self.row = row
        self.column = column


class MissingColumn(KeyError):
    pass


@dataclass
class Dataset:
    """Inputs ``X`` (D, input_dim) and targets ``y``.

    ``y`` is (D, target_dim) for regression, integer labels for
    classification, or (D,) observed rewards when ``actions`` is set (the
    reward of ``actions[d]`` is observed). The affine normalization
    ``raw = stored * scale + mean`` is kept for inversion.
    """

    X: np.ndarray
    y: np.ndarray
    actions: np.ndarray | None = None
    x_mean: np.ndarray | float = 0.0
    x_scale: np.ndarray | float = 1.0
    y_mean: float = 0.0
    y_scale: float = 1.0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y)
        if self.y.shape[0] != self.X.shape[0]:
            raise ValueError("inputs and targets disagree in length")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y.astype(float)))):
            raise ValueError("dataset contains non-finite entries")

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx):
        a = None if self.actions is None else self.actions[idx]
        return replace(self, X=self.X[idx], y=self.y[idx], actions=a)

    def raw_inputs(self):
        return self.X * self.x_scale + self.x_mean

    def raw_targets(self):
        return self.y * self.y_scale + self.y_mean


def toy_regression(rng, n=20, noise_var=0.0009):
    """1-d toy problem: 60% of inputs from U(0, 0.6), the rest from U(0, 0.8).

    Targets are ``x + sin(4(x + e)) + sin(13(x + e)) + e`` with one noise
    draw ``e ~ N(0, noise_var)`` per point.
    """
    n_a = int(round(0.6 * n))
    x = np.concatenate([rng.uniform(0.0, 0.6, n_a), rng.uniform(0.0, 0.8, n - n_a)])
    e = rng.normal(0.0, np.sqrt(noise_var), n)
    y = x + np.sin(4.0 * (x + e)) + np.sin(13.0 * (x + e)) + e
    return Dataset(x[:, None], y[:, None])


def toy_target_mean(x):
    """Noise-free toy curve, for plotting against predictions."""
    x = np.asarray(x, dtype=np.float64)
    return x + np.sin(4.0 * x) + np.sin(13.0 * x)


def read_numeric_csv(path):
    """Header names and a float matrix; raises ParseError with the position."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(1, None, "empty file") from None
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(r, None, f"expected {len(header)} fields, got {len(row)}")
            vals = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(r, name, f"not a number: {cell!r}") from None
                if not np.isfinite(v):
                    raise ParseError(r, name, "non-finite value")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ParseError(2, None, "no data rows")
    return header, np.array(rows)


def load_csv_regression(path, target_column, standardize=False):
    """Regression dataset from a numeric CSV with a header row.

    With ``standardize`` every feature and the target are z-scored with
    statistics of the whole file; use :func:`split_standardize` to get
    train-only statistics applied to a held-out split.
    """
    header, M = read_numeric_csv(path)
    if target_column not in header:
        raise MissingColumn(target_column)
    j = header.index(target_column)
    X = np.delete(M, j, axis=1)
    y = M[:, j : j + 1]
    data = Dataset(X, y)
    return standardize_with(data, data) if standardize else data


def _stats(a):
    mean = a.mean(axis=0)
    scale = a.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def standardize_with(train, data):
    """Z-score ``data`` (raw units) using the statistics of ``train``."""
    xm, xs = _stats(train.raw_inputs())
    ym, ys = _stats(train.raw_targets())
    return Dataset(
        (data.raw_inputs() - xm) / xs,
        (data.raw_targets() - ym) / ys,
        x_mean=xm,
        x_scale=xs,
        y_mean=float(ym[0]),
        y_scale=float(ys[0]),
    )


def split_indices(n, rng, test_fraction=0.1):
    perm = rng.permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def split_standardize(data, rng, test_fraction=0.1, standardize=True):
    """Random train/test split; normalization uses training statistics only."""
    tr, te = split_indices(len(data), rng, test_fraction)
    train, test = data.subset(tr), data.subset(te)
    if standardize:
        return standardize_with(train, train), standardize_with(train, test)
    return train, test


def synthetic_regression(rng, n=506, d=13, noise=0.3):
    """Offline stand-in for a small tabular regression set.

    A fixed random one-hidden-layer teacher plus a linear part, with
    gaussian noise; the shape defaults to 506 x 13.
    """
    X = rng.normal(size=(n, d))
    W = rng.normal(size=(d, 8)) / np.sqrt(d)
    v = rng.normal(size=8)
    beta = rng.normal(size=d) / np.sqrt(d)
    y = np.maximum(X @ W, 0.0) @ v + X @ beta + noise * rng.normal(size=n)
    return Dataset(X, y[:, None])
