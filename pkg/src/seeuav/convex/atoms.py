"""Convex atoms, each vectorized over ``k`` instances.

An atom owns a stacked affine argument ``u = A x + b`` and reports, per
instance, its value together with the gradient and Hessian with respect to
``u``. The chain rule through ``A`` is applied by the program evaluator.
"""

from __future__ import annotations

import numpy as np

from .expr import Affine

EXP_ARG_LIMIT = 40.0

_EMPTY_I = np.zeros(0, dtype=np.int64)
_EMPTY_F = np.zeros(0)


def _interleave(args: list[Affine]) -> Affine:
    """Stack ``d`` k-vectors instance-major: row ``i*d + j`` is ``args[j][i]``."""
    d = len(args)
    k = max(a.size for a in args)
    args = [a._broadcast(k) for a in args]
    rows = np.concatenate([a.rows * d + j for j, a in enumerate(args)])
    cols = np.concatenate([a.cols for a in args])
    vals = np.concatenate([a.vals for a in args])
    b = np.empty(k * d)
    for j, a in enumerate(args):
        b[j::d] = a.b
    return Affine(rows.astype(np.int64), cols.astype(np.int64), vals, b)


def _coef(c, k: int) -> np.ndarray:
    return np.array(np.broadcast_to(np.asarray(c, dtype=float), (k,)))


class Atom:
    """Base class. ``arg`` holds the stacked argument, ``inst`` maps argument rows to instances."""

    kind = "atom"
    arg: Affine
    inst: np.ndarray
    k: int

    def evaluate(self, u: np.ndarray, derivs: bool = True):
        """Return ``(value[k], grad[r], (hi, hj, hv))`` or ``None`` outside the domain."""
        raise NotImplementedError

    def domain_args(self) -> np.ndarray:
        """Local argument rows that must stay strictly positive."""
        return _EMPTY_I

    def describe(self) -> str:
        return f"{self.kind}[{self.k}]"


class _FixedDim(Atom):
    dim = 1

    def _setup(self, args: list[Affine], coef) -> None:
        self.arg = _interleave(args) if len(args) > 1 else args[0]
        self.dim = len(args)
        self.k = self.arg.size // self.dim
        self.inst = np.repeat(np.arange(self.k), self.dim)
        self.coef = _coef(coef, self.k)

    def _block_hess(self, blocks: np.ndarray):
        """Dense (k, d, d) per-instance Hessian blocks -> triplets."""
        d = self.dim
        base = (np.arange(self.k) * d)[:, None, None]
        ii = base + np.arange(d)[None, :, None] + 0 * np.arange(d)[None, None, :]
        jj = base + np.arange(d)[None, None, :] + 0 * np.arange(d)[None, :, None]
        return ii.ravel(), jj.ravel(), blocks.ravel()


class Linear(_FixedDim):
    kind = "affine"

    def __init__(self, expr: Affine, coef=1.0):
        self._setup([expr], coef)

    def evaluate(self, u, derivs=True):
        val = self.coef * u
        if not derivs:
            return val, None, None
        return val, self.coef.copy(), (_EMPTY_I, _EMPTY_I, _EMPTY_F)


class SquaredNorm(_FixedDim):
    """``coef * ||u||^2`` for a ``d``-dimensional affine argument."""

    kind = "squared_norm"

    def __init__(self, args: list[Affine], coef=1.0):
        self._setup(list(args), coef)

    def evaluate(self, u, derivs=True):
        U = u.reshape(self.k, self.dim)
        val = self.coef * np.sum(U * U, axis=1)
        if not derivs:
            return val, None, None
        grad = (2.0 * self.coef[:, None] * U).ravel()
        idx = np.arange(u.size)
        return val, grad, (idx, idx, np.repeat(2.0 * self.coef, self.dim))


class Quadratic(Atom):
    """Single-instance convex quadratic ``0.5 u' P u`` with ``P`` positive semidefinite."""

    kind = "quadratic"

    def __init__(self, args: list[Affine], P):
        self.P = np.asarray(P, dtype=float)
        d = len(args)
        if self.P.shape != (d, d):
            raise ValueError("P must be d x d")
        if np.min(np.linalg.eigvalsh(0.5 * (self.P + self.P.T))) < -1e-12:
            raise ValueError("P must be positive semidefinite")
        self.arg = _interleave(list(args))
        self.k = self.arg.size // d
        if self.k != 1:
            raise ValueError("Quadratic atoms are single-instance")
        self.inst = np.zeros(d, dtype=np.int64)
        self.dim = d

    def evaluate(self, u, derivs=True):
        val = np.array([0.5 * u @ self.P @ u])
        if not derivs:
            return val, None, None
        Ps = 0.5 * (self.P + self.P.T)
        ii, jj = np.meshgrid(np.arange(self.dim), np.arange(self.dim), indexing="ij")
        return val, Ps @ u, (ii.ravel(), jj.ravel(), Ps.ravel())


class CubedNorm(_FixedDim):
    """``coef * ||u||^3``."""

    kind = "cubed_norm"

    def __init__(self, args: list[Affine], coef=1.0):
        self._setup(list(args), coef)

    def evaluate(self, u, derivs=True):
        U = u.reshape(self.k, self.dim)
        nrm = np.sqrt(np.sum(U * U, axis=1))
        val = self.coef * nrm**3
        if not derivs:
            return val, None, None
        grad = (3.0 * (self.coef * nrm)[:, None] * U).ravel()
        safe = np.where(nrm > 0, nrm, 1.0)
        eye = np.eye(self.dim)[None]
        outer = U[:, :, None] * U[:, None, :] / safe[:, None, None]
        blocks = 3.0 * self.coef[:, None, None] * (nrm[:, None, None] * eye + outer)
        return val, grad, self._block_hess(blocks)


class Reciprocal(_FixedDim):
    """``coef / u`` on ``u > 0``."""

    kind = "reciprocal"

    def __init__(self, expr: Affine, coef=1.0):
        self._setup([expr], coef)

    def domain_args(self):
        return np.arange(self.k)

    def evaluate(self, u, derivs=True):
        if np.any(u <= 0):
            return None
        val = self.coef / u
        if not derivs:
            return val, None, None
        idx = np.arange(self.k)
        return val, -self.coef / u**2, (idx, idx, 2.0 * self.coef / u**3)


class QuadOverLin(_FixedDim):
    """``coef * ||u||^2 / s`` on ``s > 0``; the last argument is ``s``."""

    kind = "quad_over_lin"

    def __init__(self, num: list[Affine], den: Affine, coef=1.0):
        self._setup(list(num) + [den], coef)

    def domain_args(self):
        return np.arange(self.k) * self.dim + self.dim - 1

    def evaluate(self, u, derivs=True):
        W = u.reshape(self.k, self.dim)
        U, s = W[:, :-1], W[:, -1]
        if np.any(s <= 0):
            return None
        sq = np.sum(U * U, axis=1)
        val = self.coef * sq / s
        if not derivs:
            return val, None, None
        c = self.coef
        grad = np.empty_like(W)
        grad[:, :-1] = 2.0 * (c / s)[:, None] * U
        grad[:, -1] = -c * sq / s**2
        d = self.dim
        blocks = np.zeros((self.k, d, d))
        idx = np.arange(d - 1)
        blocks[:, idx, idx] = (2.0 * c / s)[:, None]
        blocks[:, :-1, -1] = -2.0 * (c / s**2)[:, None] * U
        blocks[:, -1, :-1] = blocks[:, :-1, -1]
        blocks[:, -1, -1] = 2.0 * c * sq / s**3
        return val, grad.ravel(), self._block_hess(blocks)


class Exp(_FixedDim):
    """``coef * exp(u)``; arguments above ``EXP_ARG_LIMIT`` are rejected."""

    kind = "exp"

    def __init__(self, expr: Affine, coef=1.0):
        self._setup([expr], coef)

    def evaluate(self, u, derivs=True):
        if np.any(u > EXP_ARG_LIMIT):
            return None
        e = self.coef * np.exp(u)
        if not derivs:
            return e, None, None
        idx = np.arange(self.k)
        return e, e.copy(), (idx, idx, e.copy())


class NegLog(_FixedDim):
    """``-coef * log(u)`` on ``u > 0``."""

    kind = "neg_log"

    def __init__(self, expr: Affine, coef=1.0):
        self._setup([expr], coef)

    def domain_args(self):
        return np.arange(self.k)

    def evaluate(self, u, derivs=True):
        if np.any(u <= 0):
            return None
        val = -self.coef * np.log(u)
        if not derivs:
            return val, None, None
        idx = np.arange(self.k)
        return val, -self.coef / u, (idx, idx, self.coef / u**2)


class LogSumExp(Atom):
    """``coef_g * log(sum_{j in g} exp(u_j) + c_g)`` with ``c_g > 0``.

    ``terms`` lists every exponent; ``group[j]`` names its instance. Groups
    must be contiguous and non-decreasing.
    """

    kind = "log_sum_exp"

    def __init__(self, terms: Affine, group, const, coef=1.0):
        group = np.asarray(group, dtype=np.int64)
        if group.size != terms.size or np.any(np.diff(group) < 0):
            raise ValueError("group must be sorted and match the term count")
        self.k = int(np.asarray(const).size)
        self.const = _coef(const, self.k)
        if np.any(self.const <= 0):
            raise ValueError("log-sum-exp constant must be strictly positive")
        self.coef = _coef(coef, self.k)
        self.arg = terms
        self.inst = group
        self.starts = np.searchsorted(group, np.arange(self.k))
        pairs_i, pairs_j = [], []
        counts = np.bincount(group, minlength=self.k)
        for g in range(self.k):
            s = self.starts[g]
            idx = np.arange(s, s + counts[g])
            ii, jj = np.meshgrid(idx, idx, indexing="ij")
            pairs_i.append(ii.ravel())
            pairs_j.append(jj.ravel())
        self.hi = np.concatenate(pairs_i) if pairs_i else _EMPTY_I
        self.hj = np.concatenate(pairs_j) if pairs_j else _EMPTY_I
        self.counts = counts

    def evaluate(self, u, derivs=True):
        logc = np.log(self.const).astype(np.result_type(u.dtype, np.float64))
        shift = logc.copy()
        if u.size:
            np.maximum.at(shift, self.inst, u)
        e = np.exp(u - shift[self.inst])
        if e.dtype == np.float64:
            # an empty bincount comes back as int64 even with weights
            tot = np.bincount(self.inst, weights=e, minlength=self.k).astype(np.float64, copy=False)
        else:
            tot = np.zeros(self.k, dtype=e.dtype)
            np.add.at(tot, self.inst, e)
        tot += np.exp(logc - shift)
        val = self.coef * (shift + np.log(tot))
        if not derivs:
            return val, None, None
        pi = e / tot[self.inst]
        grad = self.coef[self.inst] * pi
        same = self.hi == self.hj
        hv = self.coef[self.inst[self.hi]] * (np.where(same, pi[self.hi], 0.0) - pi[self.hi] * pi[self.hj])
        return val, grad, (self.hi, self.hj, hv)
