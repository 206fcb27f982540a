"""Bounded-variable revised simplex.

The LP is held as ``A x - s = 0`` with box bounds on both the structural
columns ``x`` and the row activities ``s``.  The main loop is a dual simplex
with a bound-flipping ratio test (most structural columns here are boxed
binaries); a primal simplex pass cleans up any dual infeasibility left on
columns that are not boxed.  The basis is factorized with SuperLU and updated
in product form, refactorizing every ``refactor_every`` pivots.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .model import FrozenModel, MilpModel

INF = math.inf

BASIC, AT_LB, AT_UB, FREE = 0, 1, 2, 3

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITER_LIMIT = "iteration_limit"
TIME_LIMIT = "time_limit"


class SingularBasis(RuntimeError):
    pass


@dataclass
class Basis:
    head: np.ndarray
    status: np.ndarray

    def copy(self) -> "Basis":
        return Basis(self.head.copy(), self.status.copy())


@dataclass
class LpResult:
    status: str
    objective: float | None
    x: np.ndarray | None
    basis: Basis | None
    iterations: int
    dual_objective: float | None = None
    row_duals: np.ndarray | None = None


def _pow2(v: np.ndarray) -> np.ndarray:
    out = np.ones_like(v)
    ok = np.isfinite(v) & (v > 0)
    out[ok] = np.exp2(np.round(np.log2(v[ok])))
    return out


def _scale_factors(A: sp.csr_matrix, passes: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Geometric-mean row/column scaling followed by column equilibration.
    Factors are powers of two so scaling is exact in floating point."""
    m, n = A.shape
    R = np.ones(m)
    C = np.ones(n)
    if A.nnz == 0:
        return R, C
    absA = abs(A).tocoo()
    rows, cols, vals = absA.row, absA.col, absA.data
    # negligible entries (e.g. a scenario weight of 1e-23) would drag the
    # geometric means by many orders of magnitude; they do not vote
    keep = vals >= 1e-9 * vals.max()
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        return _scale_loop(R, C, rows, cols, vals, m, n, passes)


def _scale_loop(R, C, rows, cols, vals, m, n, passes):
    for _ in range(passes):
        sv = vals * R[rows] * C[cols]
        rmax = np.zeros(m); np.maximum.at(rmax, rows, sv)
        rmin = np.full(m, INF); np.minimum.at(rmin, rows, sv)
        f = np.where(rmax > 0, 1.0 / np.sqrt(rmax * np.where(np.isfinite(rmin), rmin, 1.0)), 1.0)
        R *= f
        sv = vals * R[rows] * C[cols]
        cmax = np.zeros(n); np.maximum.at(cmax, cols, sv)
        cmin = np.full(n, INF); np.minimum.at(cmin, cols, sv)
        f = np.where(cmax > 0, 1.0 / np.sqrt(cmax * np.where(np.isfinite(cmin), cmin, 1.0)), 1.0)
        C *= f
    sv = vals * R[rows] * C[cols]
    cmax = np.zeros(n); np.maximum.at(cmax, cols, sv)
    C = np.where(cmax > 0, C / np.where(cmax > 0, cmax, 1.0), C)
    return _pow2(R), _pow2(C)


class SimplexSolver:
    """Reusable LP engine for one constraint matrix; bounds may change per call
    (branch-and-bound nodes) and a previous :class:`Basis` may be supplied as a
    warm start."""

    def __init__(self, model: MilpModel | FrozenModel, feas_tol: float = 1e-7,
                 opt_tol: float = 1e-9, pivot_tol: float = 1e-7,
                 refactor_every: int = 100, scale: bool = True):
        fm = model.freeze() if isinstance(model, MilpModel) else model
        self.fm = fm
        self.n, self.m = fm.n, fm.m
        self.feas_tol, self.opt_tol, self.pivot_tol = feas_tol, opt_tol, pivot_tol
        self.refactor_every = refactor_every
        if scale:
            R, C = _scale_factors(fm.A)
        else:
            R, C = np.ones(self.m), np.ones(self.n)
        self.R, self.C = R, C
        As = sp.diags(R) @ fm.A @ sp.diags(C)
        self.A_csc = sp.csc_matrix(As)
        self.A_csc.sort_indices()
        self.At = sp.csr_matrix(As.T)
        self.A_full = sp.hstack([self.A_csc, -sp.identity(self.m, format="csc")], format="csc")
        self.A_full.sort_indices()
        cmax = np.max(np.abs(fm.c * C)) if self.n else 1.0
        self.cscale = float(_pow2(np.array([1.0 / cmax]))[0]) if cmax > 0 else 1.0
        self.cost = np.concatenate([fm.c * C * self.cscale, np.zeros(self.m)])
        self.row_lo = fm.row_lo * R
        self.row_hi = fm.row_hi * R
        self.big = 1e9

    # ------------------------------------------------------------------
    def _col(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.A_full.indptr[j], self.A_full.indptr[j + 1]
        return self.A_full.indices[a:b], self.A_full.data[a:b]

    def _dense_col(self, j: int) -> np.ndarray:
        v = np.zeros(self.m)
        idx, val = self._col(j)
        v[idx] = val
        return v

    def _factor(self) -> None:
        B = self.A_full[:, self.head]
        try:
            self.lu = splu(B, permc_spec="COLAMD", options={"SymmetricMode": False})
        except RuntimeError as exc:
            raise SingularBasis(str(exc)) from None
        self.etas: list[tuple] = []

    def _repair(self) -> None:
        """Swap dependent basic columns for slacks that complete the basis."""
        m = self.m
        B = self.A_full[:, self.head].toarray()
        Q, R, piv = scipy.linalg.qr(B, pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-9 * max(diag[0], 1e-300)))
        if rank == m:
            return
        _, rows = scipy.linalg.qr(Q[:, rank:].T, pivoting=True, mode="r")
        for pos, row in zip(piv[rank:], rows[:m - rank]):
            j = int(self.head[pos])
            lo, hi = self.lo[j], self.hi[j]
            self.status[j] = AT_LB if np.isfinite(lo) else (AT_UB if np.isfinite(hi) else FREE)
            self.head[pos] = self.n + int(row)
            self.status[self.n + int(row)] = BASIC
        self._factor()

    def _ftran(self, a: np.ndarray) -> np.ndarray:
        z = self.lu.solve(a)
        for r, idx, val, er in self.etas:
            zr = z[r] / er
            if zr != 0.0:
                z[idx] -= zr * val
            z[r] = zr
        return z

    def _btran(self, e: np.ndarray) -> np.ndarray:
        w = e.copy()
        for r, idx, val, er in reversed(self.etas):
            s = float(val @ w[idx])
            w[r] = (w[r] - s) / er
        return self.lu.solve(w, trans="T")

    def _push_eta(self, r: int, alpha: np.ndarray) -> None:
        er = alpha[r]
        nz = np.flatnonzero(alpha)
        nz = nz[nz != r]
        self.etas.append((r, nz, alpha[nz].copy(), er))

    # ------------------------------------------------------------------
    def _recompute_primal(self) -> None:
        xN = self.x.copy()
        xN[self.head] = 0.0
        rhs = -(self.A_csc @ xN[:self.n] - xN[self.n:])
        self.x[self.head] = self._ftran(rhs)

    def _recompute_dual(self) -> None:
        y = self._btran(self.cost[self.head])
        self.y = y
        self.d = self.cost - np.concatenate([self.At @ y, -y])
        self.d[self.head] = 0.0

    def _row_alpha(self, r: int) -> np.ndarray:
        e = np.zeros(self.m)
        e[r] = 1.0
        rho = self._btran(e)
        return np.concatenate([self.At @ rho, -rho])

    def _place_all_nonbasic(self) -> None:
        st = self.status
        at_lb, at_ub, free = st == AT_LB, st == AT_UB, st == FREE
        self.x[at_lb] = self.lo[at_lb]
        self.x[at_ub] = self.hi[at_ub]
        self.x[free] = 0.0

    def _place_nonbasic(self, j: int) -> None:
        st = self.status[j]
        if st == AT_LB:
            self.x[j] = self.lo[j]
        elif st == AT_UB:
            self.x[j] = self.hi[j]
        elif st == FREE:
            self.x[j] = 0.0

    def _default_status(self, j: int) -> int:
        lo, hi, c = self.lo[j], self.hi[j], self.cost[j]
        if np.isfinite(lo) and np.isfinite(hi):
            return AT_UB if c < 0 else AT_LB
        if c > 0 and np.isfinite(lo):
            return AT_LB
        if c < 0 and np.isfinite(hi):
            return AT_UB
        if c == 0:
            if np.isfinite(lo):
                return AT_LB
            if np.isfinite(hi):
                return AT_UB
            return FREE
        # wrong-signed cost on a half-open or free column: temporary box
        if c > 0:
            self.lo[j] = -self.big
            self.art[j] = True
            return AT_LB
        self.hi[j] = self.big
        self.art[j] = True
        return AT_UB

    def _cold_start(self) -> None:
        N = self.n + self.m
        self.head = np.arange(self.n, N)
        self.status = np.full(N, AT_LB, dtype=np.int8)
        self.status[self.head] = BASIC
        for j in range(self.n):
            self.status[j] = self._default_status(j)

    def _sanitize_status(self) -> None:
        st = self.status
        fin_lo, fin_hi = np.isfinite(self.lo), np.isfinite(self.hi)
        nb = st != BASIC
        bad_lb = nb & (st == AT_LB) & ~fin_lo
        bad_ub = nb & (st == AT_UB) & ~fin_hi
        bad_free = nb & (st == FREE) & (fin_lo | fin_hi)
        for mask in (bad_lb, bad_ub, bad_free):
            st[mask & fin_lo] = AT_LB
            st[mask & ~fin_lo & fin_hi] = AT_UB
            st[mask & ~fin_lo & ~fin_hi] = FREE

    # ------------------------------------------------------------------
    def solve(self, lb: np.ndarray | None = None, ub: np.ndarray | None = None,
              basis: Basis | None = None, iter_limit: int | None = None,
              deadline: float | None = None) -> LpResult:
        n, m = self.n, self.m
        lb = self.fm.lb if lb is None else lb
        ub = self.fm.ub if ub is None else ub
        with np.errstate(invalid="ignore"):
            self.lo = np.concatenate([np.asarray(lb, float) / self.C, self.row_lo])
            self.hi = np.concatenate([np.asarray(ub, float) / self.C, self.row_hi])
        if np.any(self.lo > self.hi):
            return LpResult(INFEASIBLE, None, None, None, 0)
        self.art = np.zeros(n + m, dtype=bool)
        self.x = np.zeros(n + m)
        if iter_limit is None:
            iter_limit = 20 * (n + m) + 1000
        warm = basis is not None
        if warm:
            self.head = basis.head.copy()
            self.status = basis.status.copy()
            self._sanitize_status()
            try:
                self._factor()
            except SingularBasis:
                self._repair()
        if not warm:
            self._cold_start()
            self._factor()
        self._place_all_nonbasic()
        self._recompute_primal()
        self._recompute_dual()
        self.iters = 0
        self.deadline = deadline

        status = None
        for _round in range(50):
            self._restore_dual_feasibility()
            status = self._dual_loop(iter_limit)
            if status != OPTIMAL:
                break
            self._refresh()
            if self._max_primal_infeas() > self.feas_tol:
                continue
            if self._dual_infeasible_boxed():
                continue
            if self._dual_infeasible_open():
                status = self._primal_loop(iter_limit)
                if status != OPTIMAL:
                    break
                self._refresh()
                if self._max_primal_infeas() > self.feas_tol or self._dual_infeasible_boxed():
                    continue
            break
        if status == OPTIMAL:
            # columns resting on a temporary box with a live reduced cost
            # would keep improving past it
            for j in np.flatnonzero(self.art & (self.status != BASIC)):
                if abs(self.d[j]) > self.opt_tol and abs(self.x[j]) >= self.big * 0.999:
                    return LpResult(UNBOUNDED, None, None, None, self.iters)
        if status == INFEASIBLE:
            return LpResult(INFEASIBLE, None, None, None, self.iters)
        if status == UNBOUNDED:
            return LpResult(UNBOUNDED, None, None, None, self.iters)
        if status in (ITER_LIMIT, TIME_LIMIT):
            return LpResult(status, None, None, self._snapshot(), self.iters)
        xs = self.x[:n] * self.C
        obj = float(self.fm.c @ xs) + self.fm.obj_const
        dual_obj = float(self.d[self.status != BASIC] @ self.x[self.status != BASIC]) / self.cscale \
            + self.fm.obj_const
        return LpResult(OPTIMAL, obj, xs, self._snapshot(), self.iters,
                        dual_objective=dual_obj, row_duals=self.y * self.R / self.cscale)

    def _snapshot(self) -> Basis:
        return Basis(self.head.copy(), self.status.copy())

    def _refresh(self) -> None:
        try:
            self._factor()
        except SingularBasis:
            self._repair()
        self._place_all_nonbasic()
        self._recompute_primal()
        self._recompute_dual()

    def _primal_infeas(self) -> np.ndarray:
        xb = self.x[self.head]
        lo, hi = self.lo[self.head], self.hi[self.head]
        with np.errstate(invalid="ignore"):
            return np.maximum(np.maximum(lo - xb, xb - hi), 0.0)

    def _max_primal_infeas(self) -> float:
        v = self._primal_infeas()
        return float(v.max()) if len(v) else 0.0

    def _dual_bad(self) -> np.ndarray:
        d, st = self.d, self.status
        fixed = self.lo == self.hi
        tol = self.opt_tol
        bad = ((st == AT_LB) & (d < -tol)) | ((st == AT_UB) & (d > tol)) | \
              ((st == FREE) & (np.abs(d) > tol))
        return bad & ~fixed

    def _dual_infeasible_boxed(self) -> bool:
        bad = self._dual_bad() & np.isfinite(self.lo) & np.isfinite(self.hi)
        if not bad.any():
            return False
        self._restore_dual_feasibility()
        return True

    def _dual_infeasible_open(self) -> bool:
        return bool(self._dual_bad().any())

    def _restore_dual_feasibility(self) -> None:
        """Flip boxed columns whose reduced cost has the wrong sign."""
        bad = self._dual_bad() & np.isfinite(self.lo) & np.isfinite(self.hi)
        idx = np.flatnonzero(bad)
        if len(idx) == 0:
            return
        delta = np.zeros(self.n + self.m)
        for j in idx:
            new = AT_UB if self.status[j] == AT_LB else AT_LB
            old_x = self.x[j]
            self.status[j] = new
            self._place_nonbasic(j)
            delta[j] = self.x[j] - old_x
        rhs = -(self.A_csc @ delta[:self.n] - delta[self.n:])
        self.x[self.head] += self._ftran(rhs)

    def _check_time(self) -> bool:
        return self.deadline is not None and time.monotonic() > self.deadline

    # ------------------------------------------------------------------
    def _dual_loop(self, iter_limit: int) -> str:
        n, m = self.n, self.m
        tol_p, piv = self.feas_tol, self.pivot_tol
        degenerate = 0
        bland = False
        while True:
            if self.iters >= iter_limit:
                return ITER_LIMIT
            if self.iters % 50 == 0 and self._check_time():
                return TIME_LIMIT
            infeas = self._primal_infeas()
            if not len(infeas) or infeas.max() <= tol_p:
                return OPTIMAL
            if bland:
                cand = np.flatnonzero(infeas > tol_p)
                r = int(cand[np.argmin(self.head[cand])])
            else:
                r = int(np.argmax(infeas))
            jr = int(self.head[r])
            below = self.x[jr] < self.lo[jr]
            target = self.lo[jr] if below else self.hi[jr]

            alpha = self._row_alpha(r)
            st = self.status
            movable = (st != BASIC) & (self.lo != self.hi)
            if below:
                elig = movable & (((st == AT_LB) & (alpha < -piv)) | ((st == AT_UB) & (alpha > piv))
                                  | ((st == FREE) & (np.abs(alpha) > piv)))
            else:
                elig = movable & (((st == AT_LB) & (alpha > piv)) | ((st == AT_UB) & (alpha < -piv))
                                  | ((st == FREE) & (np.abs(alpha) > piv)))
            cand = np.flatnonzero(elig)
            if len(cand) == 0:
                return INFEASIBLE
            # pivots far below the row's largest entry make the basis ill-conditioned
            amag = np.abs(alpha[cand])
            cand = cand[amag >= 1e-7 * amag.max()]
            dj = self.d[cand]
            slack = np.where(st[cand] == AT_LB, dj, np.where(st[cand] == AT_UB, -dj, np.abs(dj)))
            slack = np.maximum(slack, 0.0)
            aabs = np.abs(alpha[cand])
            ratio = slack / aabs

            flips: list[int] = []
            if bland:
                best = ratio.min()
                ties = cand[ratio <= best + 1e-12]
                q = int(ties.min())
            else:
                order = np.argsort(ratio, kind="stable")
                slope = abs(self.x[jr] - target)
                k = 0
                rng = (self.hi - self.lo)[cand]
                while k < len(order) - 1:
                    c_k = order[k]
                    if not np.isfinite(rng[c_k]):
                        break
                    dec = aabs[c_k] * rng[c_k]
                    if slope - dec <= 0:
                        break
                    slope -= dec
                    k += 1
                # Harris-style pick among the near-tied tail for a larger pivot
                rest = order[k:]
                bound = ratio[order[k]] + self.opt_tol / np.maximum(aabs[rest], 1e-300)
                near = rest[ratio[rest] <= bound]
                pick = near[np.argmax(aabs[near])]
                flips = [int(cand[c]) for c in order[:k]]
                q = int(cand[pick])
                if pick in order[:k]:
                    flips.remove(q)
            arq = alpha[q]
            theta_d = self.d[q] / arq

            if flips:
                delta = np.zeros(n + m)
                for j in flips:
                    old = self.x[j]
                    self.status[j] = AT_UB if self.status[j] == AT_LB else AT_LB
                    self._place_nonbasic(j)
                    delta[j] = self.x[j] - old
                rhs = -(self.A_csc @ delta[:n] - delta[n:])
                self.x[self.head] += self._ftran(rhs)

            aq = self._ftran(self._dense_col(q))
            if abs(aq[r] - arq) > 1e-7 * max(1.0, abs(arq)):
                # numerical trouble: refactor and retry this iteration
                self._refresh()
                if len(self.etas) == 0 and abs(aq[r]) < piv:
                    bland = True
                continue
            t = (self.x[jr] - target) / aq[r]
            self.x[self.head] -= t * aq
            self.x[q] += t
            self.x[jr] = target

            mask = self.status != BASIC
            self.d[mask] -= theta_d * alpha[mask]
            self.d[jr] = -theta_d
            self.d[q] = 0.0

            self.status[jr] = AT_LB if below else AT_UB
            self.status[q] = BASIC
            self.head[r] = q
            self._push_eta(r, aq)
            self.iters += 1

            if abs(theta_d) < 1e-12:
                degenerate += 1
                if degenerate > 200:
                    bland = True
            else:
                degenerate = 0
                bland = False
            if len(self.etas) >= self.refactor_every:
                self._refresh()

    def _primal_loop(self, iter_limit: int) -> str:
        m = self.m
        piv = self.pivot_tol
        degenerate = 0
        bland = False
        while True:
            if self.iters >= iter_limit:
                return ITER_LIMIT
            if self.iters % 50 == 0 and self._check_time():
                return TIME_LIMIT
            bad = self._dual_bad()
            cand = np.flatnonzero(bad)
            if len(cand) == 0:
                return OPTIMAL
            if bland:
                q = int(cand.min())
            else:
                q = int(cand[np.argmax(np.abs(self.d[cand]))])
            dq = self.d[q]
            direction = 1.0 if dq < 0 else -1.0
            aq = self._ftran(self._dense_col(q))
            xb = self.x[self.head]
            lo_b, hi_b = self.lo[self.head], self.hi[self.head]
            g = direction * aq
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = np.full(m, INF)
                gtol = max(piv, 1e-7 * float(np.abs(g).max(initial=0.0)))
                dec = g > gtol
                inc = g < -gtol
                lim[dec] = np.where(np.isfinite(lo_b[dec]), (xb[dec] - lo_b[dec] + self.feas_tol) / g[dec], INF)
                lim[inc] = np.where(np.isfinite(hi_b[inc]), (hi_b[inc] - xb[inc] + self.feas_tol) / -g[inc], INF)
            tmax = lim.min() if m else INF
            own = self.hi[q] - self.lo[q]
            if not np.isfinite(tmax) and not np.isfinite(own):
                return UNBOUNDED
            if own <= tmax:
                # bound flip of the entering column
                t = own
                self.x[self.head] -= t * g
                self.x[q] += direction * t
                self.status[q] = AT_UB if direction > 0 else AT_LB
                self._place_nonbasic(q)
                self.iters += 1
                self._recompute_dual()
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                exact = np.full(m, INF)
                exact[dec] = np.where(np.isfinite(lo_b[dec]), (xb[dec] - lo_b[dec]) / g[dec], INF)
                exact[inc] = np.where(np.isfinite(hi_b[inc]), (hi_b[inc] - xb[inc]) / -g[inc], INF)
            near = np.flatnonzero(exact <= tmax)
            if bland:
                r = int(near[np.argmin(self.head[near])])
            else:
                r = int(near[np.argmax(np.abs(g[near]))])
            t = max(exact[r], 0.0)
            jr = int(self.head[r])
            to_lb = g[r] > 0
            self.x[self.head] -= t * g
            self.x[q] += direction * t
            self.x[jr] = self.lo[jr] if to_lb else self.hi[jr]
            self.status[jr] = AT_LB if to_lb else AT_UB
            self.status[q] = BASIC
            self.head[r] = q
            self._push_eta(r, aq)
            self.iters += 1
            if len(self.etas) >= self.refactor_every:
                self._refresh()
            else:
                self._recompute_dual()
            if t < 1e-12:
                degenerate += 1
                if degenerate > 200:
                    bland = True
            else:
                degenerate = 0
                bland = False


def solve_lp(model: MilpModel, time_limit: float | None = None):
    """Solve the continuous relaxation of ``model`` (binaries relaxed to [0, 1])."""
    from .model import MilpSolution
    solver = SimplexSolver(model)
    deadline = None if time_limit is None else time.monotonic() + time_limit
    res = solver.solve(deadline=deadline)
    if res.status != OPTIMAL:
        st = {INFEASIBLE: MilpSolution.INFEASIBLE, UNBOUNDED: MilpSolution.UNBOUNDED,
              TIME_LIMIT: MilpSolution.TIME_LIMIT}.get(res.status, MilpSolution.TIME_LIMIT)
        return MilpSolution(st, None, iterations=res.iterations)
    fm = solver.fm
    sol = MilpSolution(MilpSolution.OPTIMAL, res.objective,
                       values=dict(zip(fm.names, res.x.tolist())),
                       best_bound=res.objective, iterations=res.iterations)
    sol.dual_objective = res.dual_objective
    return sol
