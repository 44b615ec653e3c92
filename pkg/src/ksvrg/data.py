"""Sparse labeled datasets: SVMlight text I/O, synthetic problems, smoothness.

Rows are stored in CSR form (``indptr``, ``indices``, ``data``) with 0-based
column indices. On disk the SVMlight convention of 1-based indices is used.
"""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np
from scipy import sparse


class SvmlightParseError(ValueError):
    """Malformed SVMlight input. ``lineno`` is 1-based (0 for whole-file errors)."""

    def __init__(self, message: str, lineno: int = 0):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class DataPoint:
    """One labeled example. ``indices`` are 1-based and strictly increasing."""

    indices: tuple[int, ...]
    values: tuple[float, ...]
    label: float

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values differ in length")
        prev = 0
        for j in self.indices:
            if j <= prev:
                raise ValueError("feature indices must be positive and strictly increasing")
            prev = j
        if not all(math.isfinite(v) for v in self.values) or not math.isfinite(self.label):
            raise ValueError("non-finite value in data point")

    @property
    def features(self) -> dict[int, float]:
        return dict(zip(self.indices, self.values))


def compute_smoothness(points: Iterable) -> float:
    """Return ``max_i ||a_i||^2 / 4``, the logistic-loss smoothness constant.

    ``points`` may hold :class:`DataPoint` objects or plain sequences of
    feature values (dense rows).
    """
    best = None
    for p in points:
        vals = p.values if isinstance(p, DataPoint) else p
        sq = float(np.sum(np.square(np.asarray(vals, dtype=np.float64))))
        best = sq if best is None else max(best, sq)
    if best is None:
        raise ValueError("compute_smoothness needs at least one point")
    return 0.25 * best


def _row_sq_norms(indptr: np.ndarray, data: np.ndarray) -> np.ndarray:
    n = len(indptr) - 1
    sq = np.square(data)
    out = np.zeros(n)
    nonempty = indptr[1:] > indptr[:-1]
    if sq.size:
        out[nonempty] = np.add.reduceat(sq, indptr[:-1][nonempty])
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable labeled dataset in CSR layout.

    Use :meth:`from_points`, :func:`parse_svmlight` or :func:`synth_logistic`
    rather than calling the constructor with raw arrays.
    """

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    labels: np.ndarray
    dim: int
    smoothness: float = field(init=False)

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int32)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        n = len(indptr) - 1
        if n < 1:
            raise ValueError("dataset needs at least one point")
        if self.dim < 1:
            raise ValueError("dataset dimension must be >= 1")
        if len(labels) != n or indptr[0] != 0 or indptr[-1] != len(data) or len(indices) != len(data):
            raise ValueError("inconsistent CSR arrays")
        if len(indices) and (indices.min() < 0 or indices.max() >= self.dim):
            raise ValueError("feature index outside [0, dim)")
        if not (np.all(np.isfinite(data)) and np.all(np.isfinite(labels))):
            raise ValueError("non-finite values in dataset")
        for arr in (indptr, indices, data, labels):
            arr.flags.writeable = False
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "smoothness", 0.25 * float(_row_sq_norms(indptr, data).max()))

    @classmethod
    def from_points(cls, points: Iterable[DataPoint], dim: int | None = None) -> "Dataset":
        points = list(points)
        if not points:
            raise ValueError("dataset needs at least one point")
        indptr = np.zeros(len(points) + 1, dtype=np.int64)
        for r, p in enumerate(points):
            indptr[r + 1] = indptr[r] + len(p.indices)
        indices = np.fromiter((j - 1 for p in points for j in p.indices), dtype=np.int32, count=indptr[-1])
        data = np.fromiter((v for p in points for v in p.values), dtype=np.float64, count=indptr[-1])
        labels = np.array([p.label for p in points], dtype=np.float64)
        max_index = int(indices.max()) + 1 if len(indices) else 0
        if dim is None:
            dim = max_index
        elif dim < max_index:
            raise ValueError(f"dim={dim} is smaller than the largest feature index {max_index}")
        return cls(indptr, indices, data, labels, dim)

    @classmethod
    def from_dense(cls, rows: np.ndarray, labels) -> "Dataset":
        rows = np.asarray(rows, dtype=np.float64)
        n, d = rows.shape
        indptr = np.arange(0, n * d + 1, d, dtype=np.int64)
        indices = np.tile(np.arange(d, dtype=np.int32), n)
        return cls(indptr, indices, rows.ravel().copy(), np.asarray(labels, dtype=np.float64), d)

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> int:
        return len(self.data)

    @property
    def points(self) -> list[DataPoint]:
        out = []
        for r in range(self.n):
            lo, hi = self.indptr[r], self.indptr[r + 1]
            out.append(
                DataPoint(
                    tuple(int(j) + 1 for j in self.indices[lo:hi]),
                    tuple(float(v) for v in self.data[lo:hi]),
                    float(self.labels[r]),
                )
            )
        return out

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def row_sq_norms(self) -> np.ndarray:
        return _row_sq_norms(self.indptr, self.data)

    def to_csr(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.dim))

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def equals(self, other: "Dataset") -> bool:
        return (
            self.dim == other.dim
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.labels, other.labels)
        )


def _parse_float(tok: str, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise SvmlightParseError(f"non-numeric token {tok!r}", lineno) from None
    if not math.isfinite(v):
        raise SvmlightParseError(f"non-finite value {tok!r}", lineno)
    return v


def parse_svmlight(text: str | TextIO, dim: int | None = None) -> Dataset:
    """Parse SVMlight/LibSVM text: ``<label> <idx>:<val> ...`` per line.

    ``#`` starts a comment. Blank lines are skipped. ``dim`` overrides the
    inferred dimension (it must not be smaller than the largest index seen).
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    labels: list[float] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        labels.append(_parse_float(tokens[0], lineno))
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise SvmlightParseError(f"expected <index>:<value>, got {tok!r}", lineno)
            try:
                idx = int(idx_s)
            except ValueError:
                raise SvmlightParseError(f"non-integer feature index {idx_s!r}", lineno) from None
            if idx < 1:
                raise SvmlightParseError(f"feature index {idx} < 1", lineno)
            if idx <= prev:
                raise SvmlightParseError(f"feature index {idx} not increasing (after {prev})", lineno)
            prev = idx
            indices.append(idx - 1)
            data.append(_parse_float(val_s, lineno))
        indptr.append(len(indices))
    if not labels:
        raise SvmlightParseError("no data points in input")
    max_index = max(indices) + 1 if indices else 0
    if dim is None:
        dim = max_index
        if dim < 1:
            raise SvmlightParseError("no features in input; pass dim explicitly")
    elif dim < max_index:
        raise SvmlightParseError(f"dim={dim} is smaller than the largest feature index {max_index}")
    return Dataset(np.array(indptr), np.array(indices, dtype=np.int32), np.array(data), np.array(labels), dim)


def load_svmlight(path: str | os.PathLike, dim: int | None = None) -> Dataset:
    with open(path, encoding="utf-8", newline=None) as fh:
        return parse_svmlight(fh, dim=dim)


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def serialize_svmlight(dataset: Dataset) -> str:
    """Inverse of :func:`parse_svmlight`; floats are written in round-trip form."""
    lines = []
    for r in range(dataset.n):
        cols, vals = dataset.row(r)
        feats = " ".join(f"{int(j) + 1}:{_fmt(v)}" for j, v in zip(cols, vals))
        lab = _fmt(dataset.labels[r])
        lines.append(f"{lab} {feats}" if feats else lab)
    return "\n".join(lines) + "\n"


def save_svmlight(dataset: Dataset, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_svmlight(dataset))


def synth_logistic(n: int, d: int, seed: int, separability: float = 0.5) -> Dataset:
    """Synthetic binary classification data with features in [-1, 1].

    Labels follow a hidden unit direction ``w``: ``b_i = +1`` with
    probability ``sigmoid(beta * <a_i, w>)`` where ``beta`` grows from 0
    (pure coin flips, ``separability=0``) to infinity (linearly separable,
    ``separability=1``). Both classes are guaranteed to occur.
    """
    if n < 2 or d < 1:
        raise ValueError("synth_logistic needs n >= 2 and d >= 1")
    if not 0.0 <= separability <= 1.0:
        raise ValueError("separability must lie in [0, 1]")
    rng = np.random.Generator(np.random.Philox(key=seed))
    rows = rng.uniform(-1.0, 1.0, size=(n, d))
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    z = rows @ w
    if separability >= 1.0:
        labels = np.where(z >= 0.0, 1.0, -1.0)
    else:
        beta = 8.0 * separability / (1.0 - separability)
        p = 0.5 * (1.0 + np.tanh(0.5 * beta * z))
        labels = np.where(rng.uniform(size=n) < p, 1.0, -1.0)
    if np.all(labels == labels[0]):
        # flip the point closest to the opposite class
        flip = int(np.argmin(z)) if labels[0] > 0 else int(np.argmax(z))
        labels[flip] = -labels[0]
    return Dataset.from_dense(rows, labels)
