"""Deterministic local search for door assignments and designs.

Used only to seed branch-and-bound incumbents; every reported bound still
comes from a solver run (or, for upper bounds, from a feasible point whose
cost is recomputed exactly).
"""
from __future__ import annotations

from typing import Mapping, Sequence

from .dro_models import FirstStageDesign
from .instance import OUTSOURCE, CddpInstance, ScenarioData
from .milp.model import vname


def door_capacities(inst: CddpInstance, design: FirstStageDesign, sd: ScenarioData):
    def caps(side, levels, D):
        return {d: (1.0 - D[d - 1]) * side.doors[d - 1].levels[k - 1].capacity if k else 0.0
                for d, k in enumerate(levels, 1)}
    return caps(inst.strip, design.strip, sd.D_strip), caps(inst.stack, design.stack, sd.D_stack)


def assignment_cost(sd: ScenarioData, xa: Mapping[int, int], ya: Mapping[int, int]) -> float:
    """Second-stage cost of a complete assignment, computed from the x*y products."""
    cost = 0.0
    if any(i == OUTSOURCE for i in xa.values()):
        cost += sd.penalty
    if any(j == OUTSOURCE for j in ya.values()):
        cost += sd.penalty
    for (m, n) in sorted(sd.H):
        cost += sd.G(m, xa[m], n, ya[n])
    return cost


def _loads(vol, assign):
    load: dict[int, float] = {}
    for item, d in assign.items():
        if d != OUTSOURCE:
            load[d] = load.get(d, 0.0) + vol[item]
    return load


def _fits(load, caps, d, extra, tol=1e-9):
    return d == OUTSOURCE or extra == 0.0 or load.get(d, 0.0) + extra <= caps[d] * (1 + tol) + tol


def _pack(vol, accepted, caps) -> dict[int, int]:
    assign = {}
    room = dict(caps)
    for item in sorted(vol, key=lambda k: (-vol[k], k)):
        fits = [d for d in accepted[item] if vol[item] == 0.0 or vol[item] <= room[d] * (1 + 1e-9) + 1e-9]
        if not fits:
            assign[item] = OUTSOURCE
            continue
        d = max(fits, key=lambda d: (room[d], -d))
        assign[item] = d
        room[d] -= vol[item]
    return assign


def local_search(sd: ScenarioData, caps_strip: Mapping[int, float], caps_stack: Mapping[int, float],
                 max_rounds: int = 50) -> tuple[dict[int, int], dict[int, int], float]:
    """Relocate and swap moves on both sides, starting from a largest-first
    packing into the door with the most room left."""
    xa = _pack(sd.S, sd.accepted_strip, caps_strip)
    ya = _pack(sd.R, sd.accepted_stack, caps_stack)
    best = assignment_cost(sd, xa, ya)
    sides = ((xa, sd.S, sd.accepted_strip, caps_strip), (ya, sd.R, sd.accepted_stack, caps_stack))
    for _ in range(max_rounds):
        improved = False
        for assign, vol, accepted, caps in sides:
            for item in sorted(assign):
                cur = assign[item]
                load = _loads(vol, assign)
                load[cur] = load.get(cur, 0.0) - (vol[item] if cur != OUTSOURCE else 0.0)
                for d in (OUTSOURCE,) + accepted[item]:
                    if d == cur or not _fits(load, caps, d, vol[item]):
                        continue
                    assign[item] = d
                    c = assignment_cost(sd, xa, ya)
                    if c < best - 1e-9:
                        best, cur, improved = c, d, True
                    else:
                        assign[item] = cur
            items = sorted(assign)
            for a_pos, a in enumerate(items):
                for b in items[a_pos + 1:]:
                    da, db = assign[a], assign[b]
                    if da == db or da not in (OUTSOURCE,) + accepted[b] or db not in (OUTSOURCE,) + accepted[a]:
                        continue
                    load = _loads(vol, assign)
                    if da != OUTSOURCE:
                        load[da] -= vol[a]
                    if db != OUTSOURCE:
                        load[db] -= vol[b]
                    if not (_fits(load, caps, da, vol[b]) and _fits(load, caps, db, vol[a])):
                        continue
                    assign[a], assign[b] = db, da
                    c = assignment_cost(sd, xa, ya)
                    if c < best - 1e-9:
                        best, improved = c, True
                    else:
                        assign[a], assign[b] = da, db
        if not improved:
            break
    return xa, ya, best


def assignment_start(xa: Mapping[int, int], ya: Mapping[int, int], sd: ScenarioData,
                     tag: str) -> dict[str, float]:
    """Binary values for the second-stage block named by ``tag``."""
    out: dict[str, float] = {}
    for m, i in xa.items():
        for d in (OUTSOURCE,) + sd.accepted_strip[m]:
            out[vname("x", m, d, tag=tag)] = 1.0 if d == i else 0.0
    for n, j in ya.items():
        for d in (OUTSOURCE,) + sd.accepted_stack[n]:
            out[vname("y", n, d, tag=tag)] = 1.0 if d == j else 0.0
    out[vname("a0", tag=tag)] = 1.0 if any(i == OUTSOURCE for i in xa.values()) else 0.0
    out[vname("b0", tag=tag)] = 1.0 if any(j == OUTSOURCE for j in ya.values()) else 0.0
    return out


def design_start(inst: CddpInstance, design: FirstStageDesign, tag: str | None = None) -> dict[str, float]:
    out = {}
    for side, base, levels in ((inst.strip, "alpha", design.strip), (inst.stack, "beta", design.stack)):
        for d in range(1, side.n + 1):
            for k in range(1, len(side.doors[d - 1].levels) + 1):
                out[vname(base, k, d, tag=tag)] = 1.0 if levels[d - 1] == k else 0.0
    return out


def _widest(inst: CddpInstance) -> FirstStageDesign:
    """Top level on as many doors as the caps allow, largest capacity first."""
    def side_levels(side):
        order = sorted(range(side.n), key=lambda d: (-side.doors[d].levels[-1].capacity, d)) \
            if all(side.doors[d].levels for d in range(side.n)) else list(range(side.n))
        chosen = set(order[:side.max_doors])
        return tuple(len(side.doors[d].levels) if d in chosen else 0 for d in range(side.n))
    return FirstStageDesign(side_levels(inst.strip), side_levels(inst.stack))


def improve_design(inst: CddpInstance, scenarios: Sequence[ScenarioData], weights: Sequence[float],
                   start: FirstStageDesign | None = None, max_rounds: int = 20
                   ) -> tuple[FirstStageDesign, float]:
    """Single-door level changes, first improvement, on ``C1 + sum w F``."""
    cache: dict[FirstStageDesign, float] = {}

    def value(des: FirstStageDesign) -> float:
        if des not in cache:
            total = des.cost(inst)
            for sd, w in zip(scenarios, weights):
                cs, ck = door_capacities(inst, des, sd)
                total += w * local_search(sd, cs, ck)[2]
            cache[des] = total
        return cache[des]

    cur = start or _widest(inst)
    best = value(cur)
    for _ in range(max_rounds):
        improved = False
        for side in ("strip", "stack"):
            doors = inst.strip if side == "strip" else inst.stack
            for d in range(doors.n):
                for k in range(len(doors.doors[d].levels) + 1):
                    levels = list(getattr(cur, side))
                    if levels[d] == k:
                        continue
                    levels[d] = k
                    cand = FirstStageDesign(tuple(levels), cur.stack) if side == "strip" \
                        else FirstStageDesign(cur.strip, tuple(levels))
                    if sum(1 for v in levels if v) > doors.max_doors:
                        continue
                    v = value(cand)
                    if v < best - 1e-9:
                        cur, best, improved = cand, v, True
        if not improved:
            break
    return cur, best
