"""Best-first branch-and-bound over binary columns."""
from __future__ import annotations

import heapq
import logging
import time
from typing import Mapping

import numpy as np

from .model import MilpModel, MilpSolution
from .simplex import OPTIMAL, INFEASIBLE, UNBOUNDED, TIME_LIMIT, SimplexSolver

log = logging.getLogger(__name__)

INT_TOL = 1e-6


class DualityAuditError(RuntimeError):
    """Raised when an LP optimum fails the primal/dual objective comparison."""


def audit(res, rel: float = 1e-6) -> None:
    if res.status != OPTIMAL:
        return
    z, w = res.objective, res.dual_objective
    if abs(z - w) > rel * max(1.0, abs(z)):
        raise DualityAuditError(f"primal {z!r} vs reconstructed dual {w!r}")


def _lp(solver: SimplexSolver, lb, ub, basis, deadline):
    res = solver.solve(lb, ub, basis=basis, deadline=deadline)
    if res.status == OPTIMAL:
        try:
            audit(res)
        except DualityAuditError:
            # a stale warm start can leave drift behind; a cold solve settles it
            res = solver.solve(lb, ub, basis=None, deadline=deadline)
            audit(res)
    return res


class _Search:
    def __init__(self, model: MilpModel, time_limit: float, node_limit: int,
                 gap_limit: float):
        self.model = model
        self.fm = model.freeze()
        self.solver = SimplexSolver(self.fm)
        self.bin_idx = np.flatnonzero(self.fm.is_binary)
        self.bin_prio = np.array([model.branch_priority.get(int(j), 0) for j in self.bin_idx])
        self.t0 = time.monotonic()
        self.deadline = self.t0 + time_limit
        self.node_limit = node_limit
        self.gap_limit = gap_limit
        self.inc_obj: float | None = None
        self.inc_x: np.ndarray | None = None
        self.nodes = 0
        self.iters = 0
        self.history: list[tuple[int, float, float]] = []
        self.bound = -np.inf

    def _record(self) -> None:
        inc = np.inf if self.inc_obj is None else self.inc_obj
        if not self.history or self.history[-1][1:] != (inc, self.bound):
            self.history.append((self.nodes, inc, self.bound))

    def _prune_level(self) -> float:
        if self.inc_obj is None:
            return np.inf
        return self.inc_obj - max(1e-9 * abs(self.inc_obj), 1e-7)

    def _fractional(self, x: np.ndarray) -> int | None:
        if len(self.bin_idx) == 0:
            return None
        xb = x[self.bin_idx]
        frac = np.abs(xb - np.round(xb))
        fractional = frac > INT_TOL
        if not fractional.any():
            return None
        top = self.bin_prio[fractional].max()
        frac[~fractional | (self.bin_prio < top)] = -1.0
        return int(self.bin_idx[int(np.argmax(frac))])   # argmax takes the lowest index on ties

    def try_incumbent(self, x: np.ndarray, lb, ub, basis) -> bool:
        """Fix binaries at their rounded values, re-solve the continuous part
        and accept the point if it passes the independent feasibility check."""
        lb2, ub2 = lb.copy(), ub.copy()
        r = np.round(x[self.bin_idx])
        lb2[self.bin_idx] = r
        ub2[self.bin_idx] = r
        if np.any(lb2 > ub2):
            return False
        res = _lp(self.solver, lb2, ub2, basis, self.deadline)
        self.iters += res.iterations
        if res.status != OPTIMAL:
            return False
        xs = res.x.copy()
        xs[self.bin_idx] = r
        if self.model.check_feasibility(xs, tol=1e-6):
            return False
        obj = self.model.objective_value(xs)
        if self.inc_obj is None or obj < self.inc_obj - 1e-12 * max(1.0, abs(obj)):
            self.inc_obj, self.inc_x = obj, xs
            self._record()
            return True
        return False

    def dive(self, x, lb, ub, basis, max_steps: int | None = None) -> None:
        """Fix the least-fractional binary, re-solve, repeat."""
        lb, ub = lb.copy(), ub.copy()
        steps = max_steps if max_steps is not None else len(self.bin_idx)
        for _ in range(steps):
            if time.monotonic() > self.deadline:
                return
            if self._fractional(x) is None:
                self.try_incumbent(x, lb, ub, basis)
                return
            xb = x[self.bin_idx]
            free = ub[self.bin_idx] > lb[self.bin_idx]
            frac = np.abs(xb - np.round(xb))
            cand = np.flatnonzero(free & (frac > INT_TOL))
            if len(cand) == 0:
                return
            k = cand[np.argmin(frac[cand])]
            j = int(self.bin_idx[k])
            v = float(np.round(x[j]))
            lb[j] = ub[j] = v
            res = _lp(self.solver, lb, ub, basis, self.deadline)
            self.iters += res.iterations
            if res.status != OPTIMAL:
                # try the other side once before giving up
                lb[j] = ub[j] = 1.0 - v
                res = _lp(self.solver, lb, ub, basis, self.deadline)
                self.iters += res.iterations
                if res.status != OPTIMAL:
                    return
            if res.objective >= self._prune_level():
                return
            x, basis = res.x, res.basis

    def run(self, start: np.ndarray | None) -> MilpSolution:
        fm = self.fm
        lb0, ub0 = fm.lb.copy(), fm.ub.copy()
        if start is not None:
            self.try_incumbent(start, lb0, ub0, None)
        root = _lp(self.solver, lb0, ub0, None, self.deadline)
        self.iters += root.iterations
        if root.status == INFEASIBLE:
            return self._finish(MilpSolution.INFEASIBLE)
        if root.status == UNBOUNDED:
            return self._finish(MilpSolution.UNBOUNDED)
        if root.status != OPTIMAL:
            return self._finish(MilpSolution.TIME_LIMIT, reason="time")
        self.root_bound = root.objective
        self.bound = root.objective
        self._record()
        if self._fractional(root.x) is None:
            self.try_incumbent(root.x, lb0, ub0, root.basis)
        else:
            self.dive(root.x, lb0, ub0, root.basis)

        heap: list = []
        counter = 0
        heapq.heappush(heap, (root.objective, 0, counter, lb0, ub0, root.basis, root.x, True))
        while heap:
            self.bound = max(self.bound, min(heap[0][0], self.inc_obj if self.inc_obj is not None else np.inf))
            self._record()
            if self.inc_obj is not None and self.gap_limit > 0:
                gap = 100.0 * (self.inc_obj - self.bound) / max(abs(self.inc_obj), 1e-12)
                if gap <= self.gap_limit:
                    return self._finish(MilpSolution.GAP_LIMIT, heap)
            if time.monotonic() > self.deadline:
                return self._finish(MilpSolution.TIME_LIMIT, heap, reason="time")
            if self.nodes >= self.node_limit:
                return self._finish(MilpSolution.TIME_LIMIT, heap, reason="nodes")
            bnd, negdepth, _, lb, ub, basis, x, solved = heapq.heappop(heap)
            if bnd >= self._prune_level():
                continue
            if not solved:
                res = _lp(self.solver, lb, ub, basis, self.deadline)
                self.iters += res.iterations
                self.nodes += 1
                if res.status == TIME_LIMIT:
                    heapq.heappush(heap, (bnd, negdepth, _, lb, ub, basis, x, False))
                    continue
                if res.status != OPTIMAL:
                    continue
                obj = max(res.objective, bnd)
                if obj >= self._prune_level():
                    continue
                x, basis = res.x, res.basis
                if self.nodes % 200 == 0 and self.inc_obj is None:
                    self.dive(x, lb, ub, basis, max_steps=50)
            else:
                obj = bnd
                self.nodes += 1
            j = self._fractional(x)
            if j is None:
                self.try_incumbent(x, lb, ub, basis)
                continue
            for side in (0.0, 1.0):
                clb, cub = lb.copy(), ub.copy()
                clb[j] = cub[j] = side
                counter += 1
                heapq.heappush(heap, (obj, negdepth - 1, counter, clb, cub, basis, None, False))
        if self.inc_obj is None:
            return self._finish(MilpSolution.INFEASIBLE)
        self.bound = self.inc_obj
        self._record()
        return self._finish(MilpSolution.OPTIMAL)

    def _finish(self, status: str, heap=None, reason: str | None = None) -> MilpSolution:
        if self.inc_obj is None and status == MilpSolution.GAP_LIMIT:
            status = MilpSolution.TIME_LIMIT
        sol = MilpSolution(status, self.inc_obj, best_bound=self.bound,
                           nodes=self.nodes, iterations=self.iters, history=list(self.history))
        if self.inc_x is not None:
            sol.values = dict(zip(self.fm.names, self.inc_x.tolist()))
        sol.limit_reason = reason
        sol.root_bound = getattr(self, "root_bound", None)
        sol.wall_time = time.monotonic() - self.t0
        return sol


def solve_milp(model: MilpModel, time_limit: float = 300.0, node_limit: int = 1_000_000,
               gap_limit: float = 0.0, start: Mapping[str, float] | None = None) -> MilpSolution:
    """Solve a mixed-binary minimization model.

    ``gap_limit`` is in percent; 0 runs the tree to completion.  ``start`` is an
    optional name→value point whose binary part seeds the incumbent.
    A node-limit stop is reported with status ``time_limit`` and
    ``limit_reason == "nodes"``.
    """
    search = _Search(model, time_limit, node_limit, gap_limit)
    x0 = None
    if start is not None:
        # names missing from the start take 0 clipped to their bounds, so
        # variables pinned by bounds need not be listed
        x0 = np.clip(np.zeros(model.n), search.fm.lb, search.fm.ub)
        for name, v in start.items():
            if model.has_var(name):
                x0[model.var(name)] = v
    return search.run(x0)
