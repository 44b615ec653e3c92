"""Finite-sum objectives ``f(x) = (1/n) sum_i f_i(x)`` with counted oracles.

Every gradient oracle that takes a :class:`CostCounters` charges it:
one component gradient is one ``gc`` and, unless the caller says the row was
already fetched, one ``er``. Passing ``counters=None`` evaluates for free;
that path is reserved for instrumentation (trace columns, verification).
"""
from __future__ import annotations

import contextlib
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import Dataset


class Loss(str, enum.Enum):
    LOGISTIC = "logistic"
    LEAST_SQUARES = "least-squares"
    SIGMOID = "sigmoid"

    @property
    def code(self) -> int:
        return _LOSS_CODES[self]

    @property
    def convex(self) -> bool:
        return self is not Loss.SIGMOID


_LOSS_CODES = {Loss.LOGISTIC: 0, Loss.LEAST_SQUARES: 1, Loss.SIGMOID: 2}

# curvature of the scalar loss relative to the logistic bound max|phi''| = 1/4
_CURVATURE_FACTOR = {Loss.LOGISTIC: 1.0, Loss.LEAST_SQUARES: 4.0, Loss.SIGMOID: 1.0}


PROGRESS = "progress"
SETUP = "setup"
FULL_GRADIENT = "full-gradient"
SNAPSHOT_REFRESH = "snapshot-refresh"


@dataclass
class CostCounters:
    """Cumulative #GC / #ER plus a ledger of reads made without progress.

    Reads charged inside :meth:`phase` with a non-progress cause are logged as
    ``(start_er, end_er, cause)`` segments; adjacent segments with the same
    cause are merged.
    """

    gc: int = 0
    er: int = 0
    stalls: list = field(default_factory=list)
    _phase: str = PROGRESS

    def charge(self, gc: int, er: int) -> None:
        if gc < 0 or er < 0:
            raise ValueError("counters never decrease")
        start = self.er
        self.gc += gc
        self.er += er
        if er and self._phase != PROGRESS:
            if self.stalls and self.stalls[-1][1] == start and self.stalls[-1][2] == self._phase:
                s = self.stalls[-1]
                self.stalls[-1] = (s[0], self.er, s[2])
            else:
                self.stalls.append((start, self.er, self._phase))

    @contextlib.contextmanager
    def phase(self, cause: str):
        prev, self._phase = self._phase, cause
        try:
            yield self
        finally:
            self._phase = prev

    def snapshot(self) -> tuple[int, int]:
        return self.gc, self.er


def _check_finite(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite point")
    return x


def loss_values(loss: Loss, z: np.ndarray, b: np.ndarray) -> np.ndarray:
    if loss is Loss.LOGISTIC:
        return np.logaddexp(0.0, -b * z)
    if loss is Loss.LEAST_SQUARES:
        return 0.5 * np.square(z - b)
    return expit(-b * z)


def loss_derivs(loss: Loss, z: np.ndarray, b: np.ndarray) -> np.ndarray:
    """d/dz of the scalar loss at margin ``z`` with label ``b``."""
    if loss is Loss.LOGISTIC:
        return -b * expit(-b * z)
    if loss is Loss.LEAST_SQUARES:
        return z - b
    s = expit(-b * z)
    return -b * s * (1.0 - s)


def loss_second_derivs(loss: Loss, z: np.ndarray, b: np.ndarray) -> np.ndarray:
    if loss is Loss.LOGISTIC:
        s = expit(-b * z)
        return b * b * s * (1.0 - s)
    if loss is Loss.LEAST_SQUARES:
        return np.ones_like(z)
    s = expit(-b * z)
    return b * b * s * (1.0 - s) * (1.0 - 2.0 * s)


class FiniteSumObjective:
    """``f_i(x) = phi(<a_i, x>, b_i) + lam/2 ||x||^2`` over a :class:`Dataset`.

    ``mu`` is ``lam`` for the convex losses and 0 for the sigmoid loss.
    ``smoothness`` bounds the Lipschitz constant of every ``grad f_i``.
    """

    def __init__(self, dataset: Dataset, loss: Loss | str = Loss.LOGISTIC, lam: float | None = None):
        self.dataset = dataset
        self.loss = Loss(loss)
        if lam is None:
            lam = 0.0 if self.loss is Loss.SIGMOID else 1.0 / dataset.n
        if not (lam >= 0.0 and math.isfinite(lam)):
            raise ValueError("ridge coefficient must be finite and >= 0")
        self.lam = float(lam)
        self.mu = self.lam if self.loss.convex else 0.0
        self.smoothness = _CURVATURE_FACTOR[self.loss] * dataset.smoothness + self.lam
        self._csr = dataset.to_csr()
        self._row_of_nnz = np.repeat(np.arange(dataset.n), np.diff(dataset.indptr))

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def dim(self) -> int:
        return self.dataset.dim

    @property
    def kappa(self) -> float:
        return self.smoothness / self.mu if self.mu > 0 else math.inf

    def _check_index(self, i: int) -> int:
        if not 0 <= i < self.n:
            raise IndexError(f"component index {i} outside [0, {self.n})")
        return int(i)

    # --- oracles -----------------------------------------------------------

    def component_gradient(self, i: int, x: np.ndarray, counters: CostCounters | None = None, *, read: bool = True) -> np.ndarray:
        """``grad f_i(x)``; charges one gc and, if ``read``, one er."""
        i = self._check_index(i)
        x = _check_finite(x)
        cols, vals = self.dataset.row(i)
        z = float(vals @ x[cols])
        c = float(loss_derivs(self.loss, np.array(z), np.array(self.dataset.labels[i])))
        g = self.lam * x
        g[cols] += c * vals
        if counters is not None:
            counters.charge(1, 1 if read else 0)
        return g

    def margins(self, idx: np.ndarray, x: np.ndarray, slots: np.ndarray | None = None) -> np.ndarray:
        """``<a_i, x>`` for ``i`` in ``idx``; with ``slots`` ``x`` is a table and row r uses ``x[slots[r]]``."""
        ds = self.dataset
        if slots is None:
            return self._csr[idx] @ x
        counts = np.diff(ds.indptr)[idx]
        starts = ds.indptr[idx]
        pos = np.repeat(starts - np.concatenate(([0], np.cumsum(counts)[:-1])), counts) + np.arange(counts.sum())
        rows = np.repeat(np.arange(len(idx)), counts)
        prod = ds.data[pos] * x[np.asarray(slots)[rows], ds.indices[pos]]
        return np.bincount(rows, weights=prod, minlength=len(idx))

    def gradient_sum(self, idx, x: np.ndarray, counters: CostCounters | None = None, *, slots: np.ndarray | None = None) -> np.ndarray:
        """``sum_{i in idx} grad f_i`` evaluated at ``x`` (or ``x[slots[r]]`` per row)."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexError("component index out of range")
        x = _check_finite(x)
        if idx.size == 0:
            return np.zeros(self.dim)
        z = self.margins(idx, x, slots)
        c = loss_derivs(self.loss, z, self.dataset.labels[idx])
        out = self._csr[idx].T @ c
        if self.lam:
            if slots is None:
                out += self.lam * len(idx) * x
            else:
                weights = np.bincount(np.asarray(slots), minlength=x.shape[0]).astype(np.float64)
                out += self.lam * (weights @ x)
        if counters is not None:
            counters.charge(len(idx), len(idx))
        return np.asarray(out, dtype=np.float64).ravel()

    def full_gradient(self, x: np.ndarray, counters: CostCounters | None = None) -> np.ndarray:
        return self.gradient_sum(np.arange(self.n), x, counters) / self.n

    def component_gradients(self, x: np.ndarray) -> np.ndarray:
        """All ``grad f_i(x)`` as an ``(n, d)`` array. Free; for verification only."""
        x = _check_finite(x)
        c = loss_derivs(self.loss, self._csr @ x, self.dataset.labels)
        out = self._csr.multiply(c[:, None]).toarray()
        out += self.lam * x
        return out

    # --- values ------------------------------------------------------------

    def component_values(self, x: np.ndarray) -> np.ndarray:
        x = _check_finite(x)
        return loss_values(self.loss, self._csr @ x, self.dataset.labels) + 0.5 * self.lam * float(x @ x)

    def component_value(self, i: int, x: np.ndarray) -> float:
        i = self._check_index(i)
        x = _check_finite(x)
        cols, vals = self.dataset.row(i)
        z = np.array(vals @ x[cols])
        return float(loss_values(self.loss, z, np.array(self.dataset.labels[i]))) + 0.5 * self.lam * float(x @ x)

    def value(self, x: np.ndarray) -> float:
        """Objective value; never charges counters."""
        x = _check_finite(x)
        z = self._csr @ x
        return float(np.mean(loss_values(self.loss, z, self.dataset.labels))) + 0.5 * self.lam * float(x @ x)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        x = _check_finite(x)
        w = loss_second_derivs(self.loss, self._csr @ x, self.dataset.labels) / self.n
        A = self._csr
        H = (A.T @ A.multiply(w[:, None])).toarray() if A.nnz else np.zeros((self.dim, self.dim))
        H[np.diag_indices_from(H)] += self.lam
        return H
