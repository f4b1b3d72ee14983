"""Structured convex programs: named variable blocks, atom sums, affine equalities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .atoms import Atom, Linear
from .expr import Affine


@dataclass
class _Group:
    atoms: list[Atom]
    k: int
    label: str


@dataclass
class ConvexProgram:
    """Minimize a sum of atoms subject to atom-sum inequalities ``<= 0`` and affine equalities.

    Variables are declared as named blocks; ``variable`` returns the global
    indices so callers can build :class:`Affine` expressions with ``Affine.of``.
    """

    name: str = "program"
    blocks: dict[str, tuple[int, tuple[int, ...]]] = field(default_factory=dict)
    n: int = 0
    objective: list[Atom] = field(default_factory=list)
    groups: list[_Group] = field(default_factory=list)
    equalities: list[tuple[Affine, str]] = field(default_factory=list)

    def variable(self, name: str, shape) -> np.ndarray:
        if name in self.blocks:
            raise ValueError(f"duplicate block {name!r}")
        shape = (shape,) if np.isscalar(shape) else tuple(int(s) for s in shape)
        size = int(np.prod(shape)) if shape else 1
        self.blocks[name] = (self.n, shape)
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        return idx

    def block(self, x: np.ndarray, name: str) -> np.ndarray:
        off, shape = self.blocks[name]
        size = int(np.prod(shape)) if shape else 1
        return np.asarray(x)[off:off + size].reshape(shape)

    def minimize(self, *atoms: Atom) -> None:
        self.objective.extend(atoms)

    def subject_to(self, atoms, label: str = "") -> None:
        """Add ``k`` rows ``sum(atoms) <= 0``; every atom must have the same ``k``."""
        atoms = [atoms] if isinstance(atoms, Atom) else list(atoms)
        ks = {a.k for a in atoms}
        if len(ks) != 1:
            raise ValueError(f"constraint {label!r} mixes instance counts {sorted(ks)}")
        self.groups.append(_Group(atoms, ks.pop(), label))

    def leq(self, lhs: Affine, rhs=0.0, label: str = "") -> None:
        self.subject_to([Linear(lhs - rhs)], label)

    def equal(self, expr: Affine, label: str = "") -> None:
        self.equalities.append((expr, label))

    @property
    def inequality_count(self) -> int:
        return sum(g.k for g in self.groups)

    def all_atoms(self):
        for a in self.objective:
            yield a, "objective"
        for g in self.groups:
            for a in g.atoms:
                yield a, g.label or "constraint"

    def compile(self) -> "CompiledProgram":
        return CompiledProgram(self)

    def dump(self) -> str:
        """Plain-text listing of blocks, objective atoms and constraint groups."""
        lines = [f"program {self.name}", f"variables {self.n}"]
        for name, (off, shape) in self.blocks.items():
            lines.append(f"  block {name} shape={shape} offset={off}")
        lines.append("minimize")
        for a in self.objective:
            lines.append(f"  {a.describe()}")
        lines.append(f"subject to ({self.inequality_count} inequality rows)")
        for g in self.groups:
            lines.append(f"  [{g.label or 'row'} x{g.k}] " + " + ".join(a.describe() for a in g.atoms) + " <= 0")
        lines.append(f"equalities ({sum(e.size for e, _ in self.equalities)} rows)")
        for e, label in self.equalities:
            lines.append(f"  [{label or 'eq'} x{e.size}] affine == 0")
        return "\n".join(lines) + "\n"


@dataclass
class Evaluation:
    ok: bool
    f0: float = np.inf
    rows: np.ndarray | None = None      # constraint values, shape (m,)
    grad: np.ndarray | None = None      # per-argument gradients, shape (R,)
    hess: tuple | None = None           # global argument triplets (i, j, v)


class CompiledProgram:
    """Stacks every atom argument into one sparse map ``u = A x + b``."""

    def __init__(self, prog: ConvexProgram):
        self.prog = prog
        n = self.n = prog.n
        mats, bs, targets, insts = [], [], [], []
        self.atoms: list[Atom] = []
        self.arg_slices: list[slice] = []
        self.inst_slices: list[slice] = []
        r0 = i0 = 0
        row = 0

        def add(atom: Atom, target_rows: np.ndarray) -> None:
            nonlocal r0, i0
            r = atom.arg.size
            mats.append(atom.arg.matrix(n))
            bs.append(atom.arg.b)
            targets.append(target_rows[atom.inst])
            insts.append(atom.inst + i0)
            self.atoms.append(atom)
            self.arg_slices.append(slice(r0, r0 + r))
            self.inst_slices.append(slice(i0, i0 + atom.k))
            r0 += r
            i0 += atom.k

        for a in prog.objective:
            add(a, np.full(a.k, -1))
        for g in prog.groups:
            for a in g.atoms:
                add(a, np.arange(row, row + g.k))
            row += g.k
        self.m = row
        self.A = (sp.vstack(mats, format="csr") if mats else sp.csr_matrix((0, n)))
        self.b = np.concatenate(bs) if bs else np.zeros(0)
        self.arg_target = np.concatenate(targets).astype(np.int64) if targets else np.zeros(0, np.int64)
        self.arg_inst = np.concatenate(insts).astype(np.int64) if insts else np.zeros(0, np.int64)
        self.is_obj = self.arg_target < 0
        self.AT = self.A.T.tocsr()
        self.R = r0
        # per-instance targets (objective -> -1)
        inst_t = np.full(i0, -1, dtype=np.int64)
        inst_t[self.arg_inst] = self.arg_target
        self.inst_target_all = inst_t
        if prog.equalities:
            E = Affine.concat([e for e, _ in prog.equalities])
            self.E = E.matrix(n).tocsr()
            self.e = -E.b
        else:
            self.E = sp.csr_matrix((0, n))
            self.e = np.zeros(0)
        self._eet = None
        self._A_dense = None

    def dense_A(self) -> np.ndarray:
        if self._A_dense is None:
            self._A_dense = self.A.toarray()
        return self._A_dense

    @property
    def p(self) -> int:
        return self.E.shape[0]

    def evaluate(self, x: np.ndarray, derivs: bool = True) -> Evaluation:
        u = self.A @ x + self.b
        vals, grads, hi, hj, hv = [], [], [], [], []
        for atom, asl in zip(self.atoms, self.arg_slices):
            res = atom.evaluate(u[asl], derivs)
            if res is None:
                return Evaluation(ok=False)
            val, g, h = res
            if not np.all(np.isfinite(val)):
                return Evaluation(ok=False)
            vals.append(val)
            if derivs:
                grads.append(g)
                hi.append(h[0] + asl.start)
                hj.append(h[1] + asl.start)
                hv.append(h[2])
        v = np.concatenate(vals) if vals else np.zeros(0)
        t = self.inst_target_all
        f0 = float(v[t < 0].sum())
        rows = np.bincount(t[t >= 0], weights=v[t >= 0], minlength=self.m).astype(np.float64, copy=False)
        if not derivs:
            return Evaluation(ok=True, f0=f0, rows=rows)
        cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))
        return Evaluation(ok=True, f0=f0, rows=rows, grad=cat(grads, float),
                          hess=(cat(hi, np.int64), cat(hj, np.int64), cat(hv, float)))

    def objective_gradient(self, ev: Evaluation) -> np.ndarray:
        return self.AT @ np.where(self.is_obj, ev.grad, 0.0)

    def constraint_jacobian(self, ev: Evaluation) -> sp.csr_matrix:
        mask = ~self.is_obj
        C = sp.csr_matrix((ev.grad[mask], (self.arg_target[mask], np.flatnonzero(mask))),
                          shape=(self.m, self.R))
        return (C @ self.A).tocsr()

    def equality_residual(self, x: np.ndarray) -> np.ndarray:
        return self.E @ x - self.e

    def project_equalities(self, x: np.ndarray) -> np.ndarray:
        """Least-norm correction onto ``E x = e``."""
        if self.p == 0:
            return x
        r = self.equality_residual(x)
        return x - self.E.T @ self.eet_solve(r)

    def eet_solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._eet is None:
            from scipy.sparse.linalg import splu
            M = (self.E @ self.E.T).tocsc()
            M = M + sp.identity(M.shape[0], format="csc") * 1e-14 * max(1.0, abs(M.diagonal()).max())
            self._eet = splu(M)
        return self._eet.solve(rhs)

    def project_nullspace(self, v: np.ndarray) -> np.ndarray:
        if self.p == 0:
            return v
        return v - self.E.T @ self.eet_solve(self.E @ v)

    def domain_rows(self) -> Affine | None:
        """Stacked affine arguments that must stay strictly positive."""
        parts = []
        for atom in self.atoms:
            idx = atom.domain_args()
            if idx.size == 0:
                continue
            a = atom.arg
            mask = np.isin(a.rows, idx)
            remap = np.full(a.size, -1)
            remap[idx] = np.arange(idx.size)
            parts.append(Affine(remap[a.rows[mask]], a.cols[mask], a.vals[mask], a.b[idx]))
        return Affine.concat(parts) if parts else None
