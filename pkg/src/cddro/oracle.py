"""Brute-force reference optima for tiny instances.

Designs are enumerated exhaustively; for each member scenario the capacity-
feasible assignments of each side are listed by depth-first search with
residual-capacity pruning, and the second-stage cost is evaluated directly
from the products x[m,i] * y[n,j] (no linearization, no LP).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ambiguity import AmbiguityMember
from .dro_models import FirstStageDesign, SdConfig, member_scenario_data
from .instance import OUTSOURCE, CddpInstance, ScenarioData

MAX_DESIGNS = 4096
MAX_ASSIGNMENTS = 1_000_000
MAX_SD_MEMBERS = 4
TOL = 1e-9


class OracleRefused(ValueError):
    pass


@dataclass
class OracleResult:
    status: str                          # "optimal" or "infeasible"
    value: float | None
    design: FirstStageDesign | None
    costs: dict[tuple[int, int], float] = field(default_factory=dict)
    gamma_member: int | None = None
    surplus: dict[tuple[int, int, int], float] = field(default_factory=dict)
    designs_enumerated: int = 0
    assignments_enumerated: int = 0


def design_count(inst: CddpInstance) -> int:
    return math.prod(len(d.levels) + 1 for side in (inst.strip, inst.stack) for d in side.doors)


def all_designs(inst: CddpInstance) -> list[FirstStageDesign]:
    def side(s):
        opts = [range(len(d.levels) + 1) for d in s.doors]
        return [lv for lv in itertools.product(*opts) if sum(1 for k in lv if k) <= s.max_doors]
    return [FirstStageDesign(a, b) for a in side(inst.strip) for b in side(inst.stack)]


def _capacities(side, levels, D) -> tuple[float, ...]:
    return tuple((1.0 - D[d]) * side.doors[d].levels[k - 1].capacity if k else 0.0
                 for d, k in enumerate(levels))


def _feasible_assignments(items: Sequence[int], vol, accepted, caps: Sequence[float]) -> list[tuple[int, ...]]:
    """All door choices (0 = outsource) per item that fit the capacities."""
    out: list[tuple[int, ...]] = []
    room = list(caps)
    cur: list[int] = []

    def dfs(pos: int) -> None:
        if pos == len(items):
            out.append(tuple(cur))
            return
        it = items[pos]
        for d in (OUTSOURCE,) + tuple(accepted[it]):
            v = vol[it]
            if d != OUTSOURCE and v > 0.0:
                if v > room[d - 1] * (1 + TOL) + TOL:
                    continue
                room[d - 1] -= v
            cur.append(d)
            dfs(pos + 1)
            cur.pop()
            if d != OUTSOURCE and v > 0.0:
                room[d - 1] += v
    dfs(0)
    return out


class _ScenarioTable:
    """Cost of every (strip assignment, stack assignment) pair of one scenario."""

    def __init__(self, sd: ScenarioData):
        self.sd = sd
        self.origins = sorted(sd.S)
        self.dests = sorted(sd.R)
        size = math.prod(len(sd.accepted_strip[m]) + 1 for m in self.origins) * \
            math.prod(len(sd.accepted_stack[n]) + 1 for n in self.dests)
        if size > MAX_ASSIGNMENTS:
            raise OracleRefused(f"assignment space {size} exceeds {MAX_ASSIGNMENTS}")
        self.size = size
        self._x: dict = {}
        self._y: dict = {}

    def _side(self, cache, items, vol, accepted, caps):
        if caps not in cache:
            cache[caps] = np.array(_feasible_assignments(items, vol, accepted, caps), dtype=int
                                   ).reshape(-1, len(items))
        return cache[caps]

    def costs(self, caps_strip, caps_stack) -> np.ndarray:
        sd = self.sd
        X = self._side(self._x, self.origins, sd.S, sd.accepted_strip, caps_strip)
        Y = self._side(self._y, self.dests, sd.R, sd.accepted_stack, caps_stack)
        total = np.zeros((len(X), len(Y)))
        total += sd.penalty * (X == OUTSOURCE).any(axis=1)[:, None]
        total += sd.penalty * (Y == OUTSOURCE).any(axis=1)[None, :]
        nI, nJ = len(caps_strip), len(caps_stack)
        for (m, n), h in sorted(sd.H.items()):
            if h == 0.0:
                continue
            # pair cost table over (strip door, stack door), door 0 = outsourced
            tab = np.full((nI + 1, nJ + 1), sd.penalty)
            if nI and nJ:
                tab[1:, 1:] = sd.cost_rate * sd.distance[:nI, :nJ] * h
            mi = X[:, self.origins.index(m)]
            nj = Y[:, self.dests.index(n)]
            total += tab[np.ix_(mi, nj)]
        return total


def _caps_for(inst, design, sd):
    return (_capacities(inst.strip, design.strip, sd.D_strip),
            _capacities(inst.stack, design.stack, sd.D_stack))


def _check_size(inst: CddpInstance) -> None:
    n = design_count(inst)
    if n > MAX_DESIGNS:
        raise OracleRefused(f"design space {n} exceeds {MAX_DESIGNS}")


def enumerate_rn(inst: CddpInstance, members: Sequence[AmbiguityMember]) -> OracleResult:
    _check_size(inst)
    tables = {(p, s): _ScenarioTable(member_scenario_data(inst, mem, s))
              for p, mem in enumerate(members) for s in mem.scenarios}
    designs = all_designs(inst)
    best: OracleResult | None = None
    for des in designs:
        c1 = des.cost(inst)
        costs = {}
        for key, tab in tables.items():
            costs[key] = float(tab.costs(*_caps_for(inst, des, tab.sd)).min())
        member = {p: sum(mem.weights[s] * costs[p, s] for s in mem.scenarios) for p, mem in enumerate(members)}
        value = c1 + max(member.values())
        if best is None or value < best.value - TOL:
            top = max(member, key=lambda p: (member[p], -p))
            best = OracleResult("optimal", value, des, costs, top)
    best.designs_enumerated = len(designs)
    best.assignments_enumerated = sum(t.size for t in tables.values())
    return best


def _reachable(options: list[np.ndarray], weights: list[float], lo: float, hi: float) -> bool:
    """Is there one value per scenario with lo <= sum w v <= hi?"""
    mins = [w * o[0] for o, w in zip(options, weights)]
    maxs = [w * o[-1] for o, w in zip(options, weights)]
    rest_min = np.concatenate([np.cumsum(mins[::-1])[::-1], [0.0]])
    rest_max = np.concatenate([np.cumsum(maxs[::-1])[::-1], [0.0]])

    def dfs(k: int, acc: float) -> bool:
        if acc + rest_min[k] > hi + TOL or acc + rest_max[k] < lo - TOL:
            return False
        if k == len(options):
            return True
        return any(dfs(k + 1, acc + weights[k] * v) for v in options[k])
    return dfs(0, 0.0)


def _best_selected(options, weights, c1, profiles, floor):
    """Cheapest choice (cost C1 + sum w F >= floor) meeting the surplus rows."""
    n = len(options)
    mins = [w * o[0] for o, w in zip(options, weights)]
    maxs = [w * o[-1] for o, w in zip(options, weights)]
    rest_min = np.concatenate([np.cumsum(mins[::-1])[::-1], [0.0]])
    rest_max = np.concatenate([np.cumsum(maxs[::-1])[::-1], [0.0]])
    best = [math.inf, None]
    choice = [0.0] * n

    def dfs(k, acc, surplus):
        if c1 + acc + rest_min[k] >= best[0] - TOL:
            return
        if c1 + acc + rest_max[k] < floor - TOL:
            return
        if any(surplus[b] > pr.expected_cap + TOL for b, pr in enumerate(profiles)):
            return
        if k == n:
            best[0], best[1] = c1 + acc, list(choice)
            return
        for v in options[k]:
            tot = c1 + v
            if any(tot - pr.threshold > pr.surplus_cap + TOL for pr in profiles):
                break   # values are sorted; larger ones fail too
            choice[k] = v
            dfs(k + 1, acc + weights[k] * v,
                [surplus[b] + weights[k] * max(0.0, tot - pr.threshold) for b, pr in enumerate(profiles)])
    dfs(0, 0.0, [0.0] * len(profiles))
    return best[0], best[1]


def enumerate_sd(inst: CddpInstance, members: Sequence[AmbiguityMember], cfg: SdConfig) -> OracleResult:
    """Joint enumeration over designs, the member carrying the robust cost and
    that member's per-scenario costs; the other members take any attainable
    cost in [u_lo, u].

    Only bounds set explicitly in ``cfg`` are applied.  The model's default
    bounds are valid for every feasible point, so leaving them out changes
    nothing and keeps this routine free of LP solves.
    """
    _check_size(inst)
    if len(members) > MAX_SD_MEMBERS:
        raise OracleRefused(f"{len(members)} members exceed {MAX_SD_MEMBERS}")
    u_lo = cfg.u_lo if cfg.u_lo is not None else -math.inf
    u_hi = cfg.u_hi if cfg.u_hi is not None else math.inf
    c_hi = cfg.c_hi if cfg.c_hi is not None else math.inf
    tables = {(p, s): _ScenarioTable(member_scenario_data(inst, mem, s))
              for p, mem in enumerate(members) for s in mem.scenarios}
    designs = all_designs(inst)
    best: OracleResult | None = None
    for des in designs:
        c1 = des.cost(inst)
        opts = {}
        ok = True
        for key, tab in tables.items():
            vals = np.unique(tab.costs(*_caps_for(inst, des, tab.sd)))
            vals = vals[c1 + vals <= c_hi + TOL]
            if len(vals) == 0:
                ok = False
                break
            opts[key] = vals
        if not ok:
            continue
        for top, mem in enumerate(members):
            o = [opts[top, s] for s in mem.scenarios]
            w = [mem.weights[s] for s in mem.scenarios]
            others = [q for q in range(len(members)) if q != top]
            floor = max([c1 + sum(members[q].weights[s] * opts[q, s][0] for s in members[q].scenarios)
                         for q in others], default=-math.inf)
            while True:
                cost, choice = _best_selected(o, w, c1, cfg.profiles, floor)
                if choice is None or cost > u_hi + TOL:
                    break
                if all(_reachable([opts[q, s] for s in members[q].scenarios],
                                  [members[q].weights[s] for s in members[q].scenarios],
                                  u_lo - c1, cost - c1) for q in others):
                    if best is None or cost < best.value - TOL:
                        costs = {(top, s): v for s, v in zip(mem.scenarios, choice)}
                        for q in others:
                            for s in members[q].scenarios:
                                costs[q, s] = float(opts[q, s][0])
                        surplus = {(top, s, b): max(0.0, c1 + v - pr.threshold)
                                   for s, v in zip(mem.scenarios, choice)
                                   for b, pr in enumerate(cfg.profiles)}
                        best = OracleResult("optimal", cost, des, costs, top, surplus)
                    break
                floor = cost + 1e-7 * max(1.0, abs(cost))
    n_assign = sum(t.size for t in tables.values())
    if best is None:
        return OracleResult("infeasible", None, None, designs_enumerated=len(designs),
                            assignments_enumerated=n_assign)
    best.designs_enumerated = len(designs)
    best.assignments_enumerated = n_assign
    return best
