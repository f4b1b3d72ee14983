"""Log-barrier interior-point method with equality-constrained Newton steps."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.sparse.linalg import splu

from .atoms import Linear, SquaredNorm
from .expr import Affine
from .program import CompiledProgram, ConvexProgram

log = logging.getLogger(__name__)

ALPHA = 0.25
BETA = 0.5
MU = 10.0
GAP_TOL = 1e-8
NEWTON_TOL = 1e-10
FEAS_TOL = 1e-7
STAT_TOL = 1e-6
PHASE1_TOL = 1e-8
QUAD_REGION = 0.1
PHASE1_MARGIN = 1e-6
PROX_WEIGHT = 1e-8
ACTIVE_REL = 1e-6
DENSE_MAX = 250          # KKT size below which dense LAPACK beats sparse LU


@dataclass
class SolveReport:
    x: np.ndarray
    objective: float
    primal_infeasibility: float
    stationarity: float
    newton_iterations: int
    barrier_stages: int
    status: str
    message: str = ""
    path: list = field(default_factory=list, repr=False)    # (t, centered x) per stage

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def restart_point(self, t_max: float = 1e2):
        """Centered iterate with the largest barrier weight not above ``t_max``.

        Restarting a perturbed program from here (with ``t0`` set to the
        returned weight) skips the early stages without starting on the
        boundary. Returns ``(x, t)`` or ``(x, 1.0)`` when no stage qualifies.
        """
        best = None
        for t, x in self.path:
            if t <= t_max:
                best = (x, t)
        return best if best is not None else (self.x, 1.0)


class _Stall(Exception):
    pass


@dataclass
class _State:
    newton: int = 0
    max_newton: int = 2000
    w: np.ndarray | None = None
    path: list = field(default_factory=list)


def _barrier_value(cp: CompiledProgram, x: np.ndarray, t: float) -> float:
    ev = cp.evaluate(x, derivs=False)
    if not ev.ok or (cp.m and np.any(ev.rows >= 0.0)):
        return np.inf
    return t * ev.f0 - float(np.sum(np.log(-ev.rows)))


def _barrier_derivs(cp: CompiledProgram, x: np.ndarray, t: float):
    ev = cp.evaluate(x, derivs=True)
    if not ev.ok:
        raise _Stall("current iterate left an atom domain")
    fr = ev.rows
    if cp.m and np.any(fr >= 0.0):
        raise _Stall("current iterate is not strictly feasible")
    w_arg = np.where(cp.is_obj, t, 0.0)
    cons = ~cp.is_obj
    w_arg[cons] = 1.0 / (-fr[cp.arg_target[cons]])
    grad = cp.AT @ (ev.grad * w_arg)
    hi, hj, hv = ev.hess
    phi = t * ev.f0 - (float(np.sum(np.log(-fr))) if cp.m else 0.0)
    if cp.n + cp.p <= DENSE_MAX:
        # small programs: scipy.sparse bookkeeping costs more than the arithmetic
        Ad = cp.dense_A()
        Hu = np.zeros((cp.R, cp.R))
        np.add.at(Hu, (hi, hj), hv * w_arg[hi])
        H = Ad.T @ Hu @ Ad
        if cp.m:
            C = np.zeros((cp.m, cp.R))
            C[cp.arg_target[cons], np.flatnonzero(cons)] += ev.grad[cons]
            J = C @ Ad
            H += (J.T / fr**2) @ J
        return phi, grad, H, ev
    Hu = sp.csr_matrix((hv * w_arg[hi], (hi, hj)), shape=(cp.R, cp.R))
    H = (cp.AT @ Hu @ cp.A)
    if cp.m:
        J = cp.constraint_jacobian(ev)
        H = H + J.T @ sp.diags(1.0 / fr**2) @ J
    return phi, grad, H.tocsc(), ev


class _DenseLU:
    """Dense LU with the ``solve`` interface of ``splu``."""

    def __init__(self, K: np.ndarray):
        with warnings.catch_warnings():
            warnings.simplefilter("error", LinAlgWarning)
            try:
                self.f = lu_factor(K)
            except LinAlgWarning as exc:
                raise np.linalg.LinAlgError(str(exc)) from None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return lu_solve(self.f, rhs)


def _newton_direction(cp: CompiledProgram, H, g, r_eq):
    """Solve the equality-constrained Newton system with equilibration and iterative refinement."""
    n, p = cp.n, cp.p
    hd = np.abs(H.diagonal())
    hmax = float(hd.max()) if n else 1.0
    # an all-zero Hessian (e.g. a cubed norm at the origin) leaves the regularization to act alone
    dcol = 1.0 / np.sqrt(np.maximum(hd, 1e-12 * hmax if hmax > 0 else 1.0))
    dense = isinstance(H, np.ndarray)
    if dense:
        Hs = dcol[:, None] * H * dcol[None, :]
        if p:
            Es = cp.E.toarray() * dcol[None, :]
            rn = np.sqrt(np.sum(Es * Es, axis=1))
            rrow = 1.0 / np.where(rn > 0, rn, 1.0)
            Es = rrow[:, None] * Es
            K = np.block([[Hs, Es.T], [Es, np.zeros((p, p))]])
        else:
            rrow = np.zeros(0)
            K = Hs
    else:
        D = sp.diags(dcol)
        Hs = (D @ H @ D).tocsc()
        if p:
            Es = cp.E @ D
            rn = np.sqrt(np.asarray(Es.multiply(Es).sum(axis=1)).ravel())
            rrow = 1.0 / np.where(rn > 0, rn, 1.0)
            Es = sp.diags(rrow) @ Es
            K = sp.bmat([[Hs, Es.T], [Es, None]], format="csc")
        else:
            rrow = np.zeros(0)
            K = Hs

    def unscale(y):
        return dcol * y[:n], rrow * y[n:]

    def residual(dx, w):
        r1 = -g - H @ dx - (cp.E.T @ w if p else 0.0)
        r2 = -r_eq - cp.E @ dx if p else np.zeros(0)
        return np.concatenate([dcol * r1, rrow * r2])

    for reg in (0.0, 1e-14, 1e-12, 1e-10, 1e-8, 1e-6):
        shift = np.concatenate([np.full(n, reg), np.full(p, -reg)])
        try:
            if dense:
                lu = _DenseLU(K + np.diag(shift) if reg else K)
            else:
                lu = splu(K + sp.diags(shift, format="csc") if reg else K)
        except (RuntimeError, np.linalg.LinAlgError):
            continue
        y = lu.solve(np.concatenate([dcol * -g, rrow * -r_eq]) if p else dcol * -g)
        if not np.all(np.isfinite(y)):
            continue
        dx, w = unscale(y)
        for _ in range(2):
            y = lu.solve(residual(dx, w))
            if not np.all(np.isfinite(y)):
                break
            ddx, dw = unscale(y)
            dx, w = dx + ddx, w + dw
        if np.all(np.isfinite(dx)):
            return dx, w
    raise _Stall("KKT system singular even after regularization")


def _center(cp: CompiledProgram, x: np.ndarray, t: float, st: _State,
            stop: Callable[[np.ndarray], bool] | None = None):
    """Minimize the barrier function for fixed t; returns (x, stopped_early)."""
    prev, x_prev = np.inf, x
    while True:
        if st.newton >= st.max_newton:
            return x, False
        phi, g, H, _ = _barrier_derivs(cp, x, t)
        dx, w = _newton_direction(cp, H, g, cp.equality_residual(x))
        st.w = w
        lam2 = -float(g @ dx)
        if lam2 / 2.0 <= NEWTON_TOL:
            return x, False
        if lam2 < QUAD_REGION:
            # quadratic convergence should shrink lam2 sharply; if not, rounding dominates
            if lam2 > 0.25 * prev:
                return (x_prev if lam2 > prev else x), False
            xn = x + dx
            prev, x_prev = lam2, x
            if not np.isfinite(_barrier_value(cp, xn, t)):
                xn = _line_search(cp, x, dx, phi, lam2, t)
                prev = np.inf
        else:
            xn = _line_search(cp, x, dx, phi, lam2, t)
            prev = np.inf
        if xn is None:
            # remaining decrease is invisible in floating point
            return x, False
        x = xn
        st.newton += 1
        if stop is not None and stop(x):
            return x, True


def _barrier_slope(cp: CompiledProgram, x: np.ndarray, dx: np.ndarray, t: float) -> float:
    ev = cp.evaluate(x, derivs=True)
    w_arg = np.where(cp.is_obj, t, 0.0)
    cons = ~cp.is_obj
    w_arg[cons] = 1.0 / (-ev.rows[cp.arg_target[cons]])
    return float((cp.AT @ (ev.grad * w_arg)) @ dx)


def _line_search(cp, x, dx, phi, lam2, t):
    """Backtracking step; None once no decrease can be certified in floating point.

    When the Armijo decrease is below the rounding of ``phi`` the step is
    accepted on a non-positive slope at the trial point instead, which by
    convexity implies the barrier did not increase along the step.
    """
    s = 1.0
    floor = 8.0 * np.finfo(float).eps * max(1.0, abs(phi))
    while True:
        xn = x + s * dx
        val = _barrier_value(cp, xn, t)
        if np.isfinite(val):
            if val <= phi - ALPHA * s * lam2:
                return xn
            if ALPHA * s * lam2 <= floor:
                if _barrier_slope(cp, xn, dx, t) <= 0.0:
                    return xn
                return None
        s *= BETA
        if s * float(np.max(np.abs(dx), initial=0.0)) <= np.finfo(float).eps * (1.0 + float(np.max(np.abs(x), initial=0.0))):
            raise _Stall(f"line search stalled at t={t:.3g} with Newton decrement {lam2:.3g}")


def _strict(cp: CompiledProgram, x: np.ndarray) -> bool:
    ev = cp.evaluate(x, derivs=False)
    return ev.ok and (cp.m == 0 or bool(np.all(ev.rows < 0.0)))


def _aux_program(prog: ConvexProgram, rows_only_linear: Affine | None, x0: np.ndarray):
    """Phase-I program: min s s.t. f_i(x) <= s, s >= -1 (or domain rows only).

    A tiny proximal term keeps the auxiliary barrier bounded below when the
    feasible set is unbounded.
    """
    aux = ConvexProgram(name=prog.name + ":phase1")
    aux.blocks = dict(prog.blocks)
    aux.n = prog.n
    s = aux.variable("__s", 1)
    aux.equalities = list(prog.equalities)
    aux.minimize(Linear(Affine.of(s)))
    if prog.n:
        aux.minimize(SquaredNorm([Affine.of(np.arange(prog.n)) - x0], PROX_WEIGHT))
    if rows_only_linear is None:
        for g in prog.groups:
            aux.subject_to(list(g.atoms) + [Linear(Affine.of(np.full(g.k, s[0])), -1.0)], g.label)
    else:
        k = rows_only_linear.size
        aux.subject_to([Linear(-rows_only_linear - Affine.of(np.full(k, s[0])))], "domain")
    aux.leq(-Affine.of(s), 1.0, "floor")
    return aux, int(s[0])


def _phase(prog: ConvexProgram, x0: np.ndarray, st: _State, domain_only: bool):
    cp0 = prog.compile()
    if domain_only:
        dom = cp0.domain_rows()
        aux, si = _aux_program(prog, dom, x0)
        start_s = float(np.max(-dom.evaluate(x0))) + 1.0
    else:
        aux, si = _aux_program(prog, None, x0)
        ev = cp0.evaluate(x0, derivs=False)
        start_s = float(np.max(ev.rows)) + 1.0 if cp0.m else 0.0
    cp = aux.compile()
    z = np.concatenate([x0, [max(start_s, 1.0)]])
    if not _strict(cp, z):
        raise _Stall("phase-I start outside atom domains")
    stop = (lambda z: z[si] < -PHASE1_MARGIN)
    # at t = 1 the s >= -1 row centers s near 0 while unbounded directions drift;
    # weighting s by the row count drives it negative within a few steps
    t = float(max(cp.m, 1))
    while True:
        z, hit = _center(cp, z, t, st, stop)
        if hit or z[si] < 0.0:
            return z[:prog.n], z[si]
        if st.newton >= st.max_newton or cp.m / t <= GAP_TOL:
            return z[:prog.n], z[si]
        t *= MU


def _refine_multipliers(r0: np.ndarray, J, E, lam: np.ndarray, rounds: int = 6):
    """Least-squares correction of the active multipliers and equality duals.

    The barrier estimate ``1/(-t f_i)`` inherits the cancellation error of
    ``f_i`` near the boundary; this re-fits the multipliers of the active rows
    to minimize the stationarity residual. Rows whose refit multiplier turns
    negative are pinned at zero and the rest refit, a few rounds at most.
    """
    free = np.flatnonzero(lam >= ACTIVE_REL * max(1.0, float(lam.max()))) if lam.size else np.zeros(0, int)
    base = r0
    for i in range(rounds):
        fit = _least_squares_fit(base, J[free] if free.size else None, E)
        if fit is None:
            return base
        r, d = fit
        neg = lam[free] + d < 0.0
        if not neg.any():
            return r
        if i == rounds - 1:
            # out of rounds: undo the negative part of the fit
            over = np.where(neg, lam[free] + d, 0.0)
            return r - J[free].T @ over
        pinned = free[neg]
        base = base - J[pinned].T @ lam[pinned]
        free = free[~neg]
    return base


def _least_squares_fit(r0: np.ndarray, Ja, E):
    """min_y |r0 + M^T y| for M = [Ja; E] via scaled normal equations; returns (residual, y_Ja)."""
    blocks = [b for b in (Ja, E) if b is not None and b.shape[0]]
    if not blocks:
        return r0, np.zeros(0)
    M = sp.vstack(blocks, format="csr")
    rn = np.sqrt(np.asarray(M.multiply(M).sum(axis=1)).ravel())
    Rs = sp.diags(1.0 / np.where(rn > 0, rn, 1.0))
    Ms = (Rs @ M).tocsr()
    N = (Ms @ Ms.T).tocsc() + sp.identity(Ms.shape[0], format="csc") * 1e-12
    try:
        lu = splu(N)
    except RuntimeError:
        return None
    y = np.zeros(Ms.shape[0])
    r = r0
    for _ in range(3):
        y = y + lu.solve(-(Ms @ r))
        r = r0 + Ms.T @ y
    k = Ja.shape[0] if Ja is not None else 0
    return r, (Rs @ y)[:k]


def _report(cp: CompiledProgram, x: np.ndarray, t: float, st: _State, stages: int,
            status: str, message: str = "") -> SolveReport:
    ev = cp.evaluate(x, derivs=True)
    g0 = cp.objective_gradient(ev)
    r = g0.copy()
    scale = np.abs(g0)
    infeas = 0.0
    J = sp.csr_matrix((0, cp.n))
    lam = np.zeros(0)
    if cp.m:
        lam = 1.0 / (-t * ev.rows)
        J = cp.constraint_jacobian(ev)
        r = r + J.T @ lam
        scale = scale + abs(J).T @ lam
        infeas = max(infeas, float(np.max(ev.rows)))
    if cp.p:
        infeas = max(infeas, float(np.max(np.abs(cp.equality_residual(x)))))
    denom = 1.0 + (float(np.max(scale)) if scale.size else 0.0)
    # residual relative to the size of the terms that cancel in it
    raw = cp.project_nullspace(r) if cp.p else r
    stat = float(np.max(np.abs(raw))) / denom if r.size else 0.0
    if r.size and stat > STAT_TOL:
        ref = _refine_multipliers(r, J, cp.E, lam)
        stat = min(stat, float(np.max(np.abs(ref))) / denom)
    infeas = max(infeas, 0.0)
    if status == "optimal" and (infeas > FEAS_TOL or stat > STAT_TOL):
        status = "numeric_failure"
        message = message or f"final checks failed: infeasibility {infeas:.3g}, stationarity {stat:.3g}"
    return SolveReport(x=x, objective=ev.f0, primal_infeasibility=infeas, stationarity=stat,
                       newton_iterations=st.newton, barrier_stages=stages, status=status,
                       message=message, path=st.path)


def _failed(x, st: _State, status: str, message: str) -> SolveReport:
    return SolveReport(x, np.inf, np.inf, np.inf, st.newton, 0, status, message)


def solve(prog: ConvexProgram, warm_start: np.ndarray | None = None,
          max_newton: int = 2000, t0: float = 1.0) -> SolveReport:
    """Minimize ``prog`` by the barrier method, running phase I when needed.

    A strictly feasible ``warm_start`` begins the barrier schedule at ``t0``;
    pair it with :meth:`SolveReport.restart_point` of a nearby solve. Starts
    that need phase I always begin at ``t = 1``.
    """
    cp = prog.compile()
    st = _State(max_newton=max_newton)
    x = np.zeros(prog.n) if warm_start is None else np.array(warm_start, dtype=float)
    if x.shape != (prog.n,):
        raise ValueError(f"warm start has shape {x.shape}, expected ({prog.n},)")
    x = cp.project_equalities(x)
    warm = warm_start is not None
    try:
        if not _strict(cp, x):
            warm = False
            if not cp.evaluate(x, derivs=False).ok:
                if cp.domain_rows() is not None:
                    x, _ = _phase(prog, x, st, domain_only=True)
                if not cp.evaluate(x, derivs=False).ok:
                    return _failed(x, st, "infeasible", "no point strictly inside the atom domains")
            if cp.m and not _strict(cp, x):
                x, s = _phase(prog, x, st, domain_only=False)
                if s >= 0.0 or not _strict(cp, x):
                    msg = f"phase I ended with s*={s:.3g}"
                    msg += " > tolerance" if s > PHASE1_TOL else " (no strictly feasible point)"
                    return _report(cp, x, 1.0, st, 0, "infeasible", msg)
        if cp.m == 0:
            # same final weight as a constrained solve, so the Newton stop is equally tight
            t = 1.0 / GAP_TOL
            x, _ = _center(cp, x, t, st)
            st.path.append((t, x))
            status = "max_iter" if st.newton >= st.max_newton else "optimal"
            return _report(cp, x, t, st, 1, status)
        t = float(t0) if warm else 1.0
        stages = 0
        while True:
            x, _ = _center(cp, x, t, st)
            stages += 1
            st.path.append((t, x))
            if st.newton >= st.max_newton:
                return _report(cp, x, t, st, stages, "max_iter")
            if cp.m / t <= GAP_TOL:
                return _report(cp, x, t, st, stages, "optimal")
            t *= MU
    except _Stall as exc:
        log.debug("barrier stalled: %s", exc)
        if _strict(cp, x):
            return _report(cp, x, 1.0, st, 0, "numeric_failure", str(exc))
        return _failed(x, st, "numeric_failure", str(exc))
