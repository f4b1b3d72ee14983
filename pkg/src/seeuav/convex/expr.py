"""Vectors of affine functions of the decision vector, stored as COO triplets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class Affine:
    """``k`` affine functions ``A x + b`` with ``A`` in triplet form.

    The column dimension stays open until the owning program is finalized, so
    expressions can be built before every variable has been declared.
    """

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    b: np.ndarray

    # make ``ndarray + Affine`` defer to Affine.__radd__
    __array_ufunc__ = None

    @property
    def size(self) -> int:
        return self.b.shape[0]

    def __len__(self) -> int:
        return self.size

    @staticmethod
    def of(index, coef=1.0) -> "Affine":
        """Select variables by global index; ``coef`` may broadcast over them."""
        idx = np.asarray(index, dtype=np.int64).ravel()
        k = idx.size
        vals = np.broadcast_to(np.asarray(coef, dtype=float).ravel() if np.ndim(coef) else coef, (k,))
        return Affine(np.arange(k), idx, np.array(vals, dtype=float), np.zeros(k))

    @staticmethod
    def const(values) -> "Affine":
        b = np.atleast_1d(np.asarray(values, dtype=float)).ravel().copy()
        empty = np.zeros(0, dtype=np.int64)
        return Affine(empty, empty, np.zeros(0), b)

    @staticmethod
    def concat(parts: list["Affine"]) -> "Affine":
        rows, cols, vals, bs = [], [], [], []
        off = 0
        for p in parts:
            rows.append(p.rows + off)
            cols.append(p.cols)
            vals.append(p.vals)
            bs.append(p.b)
            off += p.size
        return Affine(np.concatenate(rows).astype(np.int64), np.concatenate(cols).astype(np.int64),
                      np.concatenate(vals), np.concatenate(bs))

    def _broadcast(self, k: int) -> "Affine":
        if self.size == k:
            return self
        if self.size != 1:
            raise ValueError(f"cannot broadcast affine of size {self.size} to {k}")
        nnz = self.vals.size
        rows = np.repeat(np.arange(k), nnz)
        return Affine(rows, np.tile(self.cols, k), np.tile(self.vals, k), np.repeat(self.b, k))

    def __add__(self, other) -> "Affine":
        if isinstance(other, Affine):
            k = max(self.size, other.size)
            a, c = self._broadcast(k), other._broadcast(k)
            return Affine(np.concatenate([a.rows, c.rows]), np.concatenate([a.cols, c.cols]),
                          np.concatenate([a.vals, c.vals]), a.b + c.b)
        b = np.asarray(other, dtype=float)
        if b.ndim > 1:
            b = b.ravel()
        return Affine(self.rows, self.cols, self.vals, self.b + np.broadcast_to(b, self.b.shape))

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return Affine(self.rows, self.cols, -self.vals, -self.b)

    def __sub__(self, other) -> "Affine":
        return self + (-other)

    def __rsub__(self, other) -> "Affine":
        return (-self) + other

    def __mul__(self, c) -> "Affine":
        c = np.asarray(c, dtype=float)
        if c.ndim == 0:
            return Affine(self.rows, self.cols, self.vals * c, self.b * c)
        c = np.broadcast_to(c.ravel(), self.b.shape)
        return Affine(self.rows, self.cols, self.vals * c[self.rows], self.b * c)

    __rmul__ = __mul__

    def matrix(self, n: int) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.size, n))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.matrix(x.size) @ x + self.b
