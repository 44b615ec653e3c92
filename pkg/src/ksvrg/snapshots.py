"""Compressed snapshot set: distinct snapshot vectors plus an index map.

Snapshot ids are row slots of one contiguous ``(capacity, d)`` buffer so the
compiled kernels can read ``theta_i = vectors[assignment[i]]`` directly. Slots
of snapshots whose reference count drops to zero are recycled.
"""
from __future__ import annotations

import numpy as np


class SnapshotStore:
    def __init__(self, n: int, x0: np.ndarray):
        if n < 1:
            raise ValueError("snapshot store needs n >= 1")
        x0 = np.asarray(x0, dtype=np.float64)
        self.n = int(n)
        self.dim = x0.shape[0]
        self._vectors = np.zeros((4, self.dim))
        self._refcount = np.zeros(4, dtype=np.int64)
        self._free = [3, 2, 1]
        self._vectors[0] = x0
        self._refcount[0] = n
        self.assignment = np.zeros(n, dtype=np.int32)

    @classmethod
    def init_uniform(cls, n: int, x0: np.ndarray) -> "SnapshotStore":
        return cls(n, x0)

    @property
    def vectors(self) -> np.ndarray:
        """The slot buffer; rows not referenced by ``assignment`` are garbage."""
        return self._vectors

    @property
    def live_count(self) -> int:
        return int(np.count_nonzero(self._refcount))

    def live_ids(self) -> np.ndarray:
        return np.flatnonzero(self._refcount)

    def refcount(self, sid: int) -> int:
        return int(self._refcount[sid])

    def lookup(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n:
            raise IndexError(f"component index {i} outside [0, {self.n})")
        v = self._vectors[self.assignment[i]]
        v.flags.writeable = False
        return v

    def _alloc(self) -> int:
        if not self._free:
            cap = self._vectors.shape[0]
            self._vectors = np.concatenate([self._vectors, np.zeros((cap, self.dim))])
            self._refcount = np.concatenate([self._refcount, np.zeros(cap, dtype=np.int64)])
            self._free = list(range(2 * cap - 1, cap - 1, -1))
        return self._free.pop()

    def reassign(self, phi, x_new: np.ndarray) -> None:
        """Point every index in ``phi`` at one new snapshot holding ``x_new``."""
        phi = np.unique(np.asarray(phi, dtype=np.int64))
        if phi.size == 0:
            return
        if phi[0] < 0 or phi[-1] >= self.n:
            raise IndexError("index in phi out of range")
        old = self.assignment[phi]
        sid = self._alloc()
        self._vectors[sid] = x_new
        touched, drops = np.unique(old, return_counts=True)
        self._refcount[touched] -= drops
        self._refcount[sid] = phi.size
        self.assignment[phi] = sid
        self._free.extend(int(s) for s in touched[self._refcount[touched] == 0])

    def memory_report(self) -> tuple[int, int]:
        """``(vectors_stored, map_entries)``."""
        return self.live_count, self.n

    def check_invariants(self) -> None:
        counts = np.bincount(self.assignment, minlength=len(self._refcount))
        if not np.array_equal(counts, self._refcount):
            raise AssertionError("refcounts disagree with assignment")
        if self._refcount.sum() != self.n:
            raise AssertionError("refcounts do not sum to n")
        free = set(self._free)
        if len(free) != len(self._free):
            raise AssertionError("duplicate free slot")
        for sid in range(len(self._refcount)):
            if (sid in free) == bool(self._refcount[sid]):
                raise AssertionError(f"slot {sid} is both live and free, or neither")
