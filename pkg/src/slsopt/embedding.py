"""Quantile-space mapping between raw embedding vectors and the search box.

The optimizer works in the unit hypercube.  To search over an empirical
embedding table (e.g. speaker embeddings), each dimension is mapped to its
empirical quantile rank over the table: ``to_quantile`` sends a raw value to
the fraction of training values at or below it, and ``from_quantile`` inverts
via order statistics, always landing exactly on a training value.  Restricting
the inverse to observed order statistics keeps every queried embedding inside
the support of the training distribution.
"""

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import as_float_array, as_point, check_unit_box


@dataclass(frozen=True)
class EmbeddingTable:
    """An immutable N x D table of embeddings with per-dimension order statistics.

    Attributes
    ----------
    data : ndarray, shape (N, D)
        Raw embedding rows, every entry in [0, 1].
    order_stats : ndarray, shape (N, D)
        Each column of ``data`` sorted ascending.
    labels : tuple of str, or None
        Optional per-row tags (e.g. group names) for mean-endpoint construction.
    """

    data: np.ndarray
    order_stats: np.ndarray
    labels: tuple | None = None

    @classmethod
    def from_array(cls, data, labels=None):
        data = as_float_array(data, "data")
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError(f"embedding table must be a non-empty 2-D matrix, got shape {data.shape}")
        check_unit_box(data, "embedding table")
        if labels is not None:
            labels = tuple(str(l) for l in labels)
            if len(labels) != data.shape[0]:
                raise ValueError(f"got {len(labels)} labels for {data.shape[0]} rows")
        order_stats = np.sort(data, axis=0)
        data = data.copy()
        data.flags.writeable = False
        order_stats.flags.writeable = False
        return cls(data=data, order_stats=order_stats, labels=labels)

    @classmethod
    def from_csv(cls, path):
        """Load a table from CSV: header row required, one embedding per row,
        optional final ``label`` column."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty file, header row required") from None
            has_labels = header and header[-1].strip().lower() == "label"
            n_cols = len(header)
            rows, labels = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != n_cols:
                    raise ValueError(f"{path}:{lineno}: expected {n_cols} columns, got {len(row)}")
                values = row[:-1] if has_labels else row
                try:
                    rows.append([float(v) for v in values])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric embedding value") from None
                if has_labels:
                    labels.append(row[-1].strip())
        if not rows:
            raise ValueError(f"{path}: no embedding rows")
        return cls.from_array(np.array(rows), labels=labels if has_labels else None)

    @property
    def n_rows(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]


def to_quantile(table, e):
    """Map a raw embedding vector to per-dimension empirical quantile ranks.

    For each dimension i, the rank is ``j / N`` where j counts training values
    <= e_i.  Values below the column minimum map to 0 and values at or above
    the maximum map to 1.
    """
    e = as_point(e, table.dim, "embedding")
    n = table.n_rows
    q = np.empty(table.dim)
    for i in range(table.dim):
        q[i] = np.searchsorted(table.order_stats[:, i], e[i], side="right") / n
    return q


def from_quantile(table, q):
    """Map quantile ranks back to raw values via order statistics.

    Dimension i returns the order statistic at (1-based) index
    ``floor(q_i * (N - 1) + 1)``, so the output is always an exact entry of
    the training column.  q is clamped to [0, 1] defensively before indexing.
    """
    q = as_point(q, table.dim, "quantile point")
    q = np.clip(q, 0.0, 1.0)
    n = table.n_rows
    idx = np.floor(q * (n - 1)).astype(int)  # 0-based form of floor(q*(N-1) + 1)
    return table.order_stats[idx, np.arange(table.dim)].copy()


def mean_embedding(table, label_filter=None):
    """Componentwise mean of the table rows, optionally restricted to one label."""
    if label_filter is None:
        return table.data.mean(axis=0)
    if table.labels is None:
        raise ValueError(f"table has no labels; cannot filter on {label_filter!r}")
    rows = [i for i, l in enumerate(table.labels) if l == label_filter]
    if not rows:
        raise ValueError(f"no rows match label {label_filter!r}")
    return table.data[rows].mean(axis=0)


def mean_endpoints(table, label_a, label_b):
    """Initial segment endpoints in quantile space: the two group-mean
    embeddings (e.g. one per speaker sex) mapped through ``to_quantile``."""
    qa = to_quantile(table, mean_embedding(table, label_a))
    qb = to_quantile(table, mean_embedding(table, label_b))
    return qa, qb


class QuantileMapper(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer view of the quantile mapping.

    ``fit`` ingests the embedding table, ``transform`` maps raw rows to
    quantile ranks, ``inverse_transform`` maps quantile rows back onto exact
    training values.
    """

    def fit(self, X, y=None, labels=None):
        self.table_ = EmbeddingTable.from_array(X, labels=labels)
        return self

    def transform(self, X):
        self._check_fitted()
        X = np.atleast_2d(as_float_array(X, "X"))
        return np.stack([to_quantile(self.table_, row) for row in X])

    def inverse_transform(self, Q):
        self._check_fitted()
        Q = np.atleast_2d(as_float_array(Q, "Q"))
        return np.stack([from_quantile(self.table_, row) for row in Q])

    def mean_embedding(self, label_filter=None):
        self._check_fitted()
        return mean_embedding(self.table_, label_filter)

    def _check_fitted(self):
        if not hasattr(self, "table_"):
            raise RuntimeError("QuantileMapper is not fitted; call fit(X) first")
