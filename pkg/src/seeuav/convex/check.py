"""Finite-difference verification of atom gradients and Hessian-vector products."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .atoms import Atom
from .program import ConvexProgram

MAX_COORDS = 64


def _weighted(atom: Atom, A, weights: np.ndarray, x: np.ndarray, derivs: bool):
    u = A @ x + atom.arg.b
    res = atom.evaluate(u, derivs)
    if res is None:
        raise ValueError(f"point outside the domain of {atom.describe()}")
    val, g, h = res
    if not derivs:
        return float(weights @ val), None, None
    grad = A.T @ (g * weights[atom.inst])
    hi, hj, hv = h
    Hu = sp.csr_matrix((hv * weights[atom.inst[hi]], (hi, hj)), shape=(u.size, u.size))
    return float(weights @ val), grad, (A.T @ Hu @ A)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / scale


def atom_gradient_error(atom: Atom, x: np.ndarray, seed: int = 0) -> float:
    """Worst relative error of the gradient and one Hessian-vector product of ``atom`` at ``x``."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    A = atom.arg.matrix(x.size).tocsr()
    w = rng.uniform(0.5, 1.5, atom.k)
    _, g, H = _weighted(atom, A, w, x, True)
    support = np.unique(atom.arg.cols)
    if support.size == 0:
        return 0.0
    coords = support if support.size <= MAX_COORDS else rng.choice(support, MAX_COORDS, replace=False)
    fd = np.empty(coords.size)
    for j, c in enumerate(coords):
        h = 1e-6 * (1.0 + abs(x[c]))
        # values are differenced in extended precision so the check is not
        # limited by float64 rounding of |f| / h
        u0 = (A @ x + atom.arg.b).astype(np.longdouble)
        col = A[:, c].toarray().ravel().astype(np.longdouble) * np.longdouble(h)
        vp = atom.evaluate(u0 + col, False)
        vm = atom.evaluate(u0 - col, False)
        if vp is None or vm is None:
            raise ValueError(f"finite-difference step leaves the domain of {atom.describe()}")
        diff = np.asarray(vp[0], dtype=np.longdouble) - np.asarray(vm[0], dtype=np.longdouble)
        fd[j] = float((w.astype(np.longdouble) @ diff) / (2 * np.longdouble(h)))
    err = _rel(g[coords], fd)
    d = np.zeros_like(x)
    d[support] = rng.standard_normal(support.size)
    d /= np.linalg.norm(d)
    h = 1e-6 * (1.0 + float(np.max(np.abs(x[support]))))
    gp = _weighted(atom, A, w, x + h * d, True)[1]
    gm = _weighted(atom, A, w, x - h * d, True)[1]
    hvp_fd = (gp - gm) / (2.0 * h)
    return max(err, _rel(H @ d, hvp_fd))


def gradient_check(prog: ConvexProgram, point, detail: dict | None = None) -> float:
    """Worst relative finite-difference error over every atom of ``prog``.

    Central differences use step ``1e-6 (1 + |x|)``. If ``detail`` is given it
    receives the error of each atom keyed by ``"<group>:<kind>:<index>"``.
    """
    x = np.asarray(point, dtype=float)
    worst = 0.0
    for i, (atom, where) in enumerate(prog.all_atoms()):
        e = atom_gradient_error(atom, x, seed=i)
        if detail is not None:
            detail[f"{where}:{atom.kind}:{i}"] = e
        worst = max(worst, e)
    return worst
