"""Cross-dock instance data, derived second-stage quantities, generator and I/O.

Door ids are 1-based (``1..n``); id 0 is the outsourcing door.  Scenario ids are
global integers, contiguous per scenario group.  A stochastic parameter is an
origin-destination cell ``(m, n)`` of the volume matrix ``H``; disruption
fractions are kept at their generated values.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rng import substream

FORMAT_VERSION = 1
OUTSOURCE = 0

Cell = tuple[int, int]


class InstanceError(ValueError):
    pass


@dataclass(frozen=True)
class CapacityLevel:
    capacity: float
    cost: float


@dataclass(frozen=True)
class Door:
    levels: tuple[CapacityLevel, ...]


@dataclass(frozen=True)
class DoorSide:
    doors: tuple[Door, ...]
    max_doors: int

    def __post_init__(self):
        if self.max_doors < 1:
            raise InstanceError("max_doors must be at least 1")
        for d, door in enumerate(self.doors, 1):
            caps = [lv.capacity for lv in door.levels]
            if any(b <= a for a, b in zip(caps, caps[1:])):
                raise InstanceError(f"door {d}: capacity levels must be strictly increasing")
            if any(lv.cost < 0 for lv in door.levels):
                raise InstanceError(f"door {d}: negative install cost")

    @property
    def n(self) -> int:
        return len(self.doors)


@dataclass(frozen=True)
class ScenarioGroup:
    id: int
    scenarios: tuple[int, ...]
    weight: Fraction


@dataclass(frozen=True)
class Scenario:
    id: int
    group: int
    origins: tuple[int, ...]
    destinations: tuple[int, ...]
    H: Mapping[Cell, float]
    D_strip: tuple[float, ...]
    D_stack: tuple[float, ...]


@dataclass
class NominalDistribution:
    """The nominal (empirical) distribution of the stochastic cells.

    ``group_parameters[g]`` is the ordered cell list H^g; realizations are read
    from the scenarios' ``H`` (missing cell means 0).
    """
    scenario_ids: list[int]
    weights: dict[int, float]
    group_of: dict[int, int]
    group_parameters: dict[int, list[Cell]]
    group_weights: dict[int, float]

    @property
    def parameters(self) -> list[Cell]:
        seen: dict[Cell, None] = {}
        for g in sorted(self.group_parameters):
            for c in self.group_parameters[g]:
                seen.setdefault(c, None)
        return list(seen)


@dataclass
class CddpInstance:
    strip: DoorSide
    stack: DoorSide
    distance: np.ndarray
    outsourcing_penalty: float
    scenario_groups: list[ScenarioGroup]
    scenarios: list[Scenario]
    cost_rate: float = 1.0
    nominal: NominalDistribution | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.distance = np.asarray(self.distance, dtype=float)
        if self.distance.shape != (self.strip.n, self.stack.n):
            raise InstanceError(f"distance matrix shape {self.distance.shape} does not match "
                                f"{self.strip.n} strip x {self.stack.n} stack doors")
        if np.any(self.distance < 0):
            raise InstanceError("negative distance")
        if not self.outsourcing_penalty > 0:
            raise InstanceError("outsourcing_penalty must be positive")
        total = sum(Fraction(g.weight) for g in self.scenario_groups)
        if abs(float(total) - 1.0) > 1e-12:
            raise InstanceError(f"scenario group weights sum to {float(total)}")
        seen = set()
        for g in self.scenario_groups:
            if list(g.scenarios) != sorted(g.scenarios):
                raise InstanceError(f"group {g.id}: scenario ids not ordered")
            if seen & set(g.scenarios):
                raise InstanceError(f"group {g.id}: scenario ids shared with another group")
            seen |= set(g.scenarios)
        self._by_id = {s.id: s for s in self.scenarios}
        if self.nominal is None:
            self.nominal = default_nominal(self)

    def scenario(self, sid: int) -> Scenario:
        return self._by_id[sid]

    def group(self, gid: int) -> ScenarioGroup:
        for g in self.scenario_groups:
            if g.id == gid:
                return g
        raise KeyError(gid)

    def max_standard_cost(self, H: Mapping[Cell, float]) -> float:
        """Upper bound on any door assignment's standard cost for volumes H."""
        return self.cost_rate * float(self.distance.max(initial=0.0)) * float(sum(H.values()))


# ---------------------------------------------------------------------------
# derived second-stage data

@dataclass
class ScenarioData:
    S: dict[int, float]
    R: dict[int, float]
    accepted_strip: dict[int, tuple[int, ...]]
    accepted_stack: dict[int, tuple[int, ...]]
    H: dict[Cell, float]
    D_strip: tuple[float, ...]
    D_stack: tuple[float, ...]
    distance: np.ndarray
    cost_rate: float
    penalty: float

    def G(self, m: int, i: int, n: int, j: int) -> float:
        """Standard cost of moving H[m, n] through strip door i and stack door j;
        any leg through door 0 costs the outsourcing penalty instead."""
        h = self.H.get((m, n), 0.0)
        if h == 0.0:
            return 0.0
        if i == OUTSOURCE or j == OUTSOURCE:
            return self.penalty
        return self.cost_rate * float(self.distance[i - 1, j - 1]) * h


def _accepted(volume: float, D: float, side: DoorSide, d: int) -> bool:
    return any(volume <= (1.0 - D) * lv.capacity for lv in side.doors[d - 1].levels)


def derive_scenario_data(instance: CddpInstance, H: Mapping[Cell, float],
                         D_strip: Sequence[float], D_stack: Sequence[float],
                         origins: Iterable[int], destinations: Iterable[int],
                         label: str = "") -> ScenarioData:
    origins, destinations = tuple(origins), tuple(destinations)
    oset, dset = set(origins), set(destinations)
    for (m, n), h in H.items():
        if not h >= 0:
            raise InstanceError(f"scenario {label}: negative volume H[{m},{n}]={h}")
        if m not in oset or n not in dset:
            raise InstanceError(f"scenario {label}: cell ({m},{n}) outside its node sets")
    for side, D in (("strip", D_strip), ("stack", D_stack)):
        for d, v in enumerate(D, 1):
            if not 0.0 <= v <= 1.0:
                raise InstanceError(f"scenario {label}: {side} door {d} disruption {v} outside [0,1]")
    if len(D_strip) != instance.strip.n or len(D_stack) != instance.stack.n:
        raise InstanceError(f"scenario {label}: disruption vector length mismatch")
    S = {m: 0.0 for m in origins}
    R = {n: 0.0 for n in destinations}
    for (m, n), h in H.items():
        S[m] += h
        R[n] += h
    acc_i = {m: tuple(i for i in range(1, instance.strip.n + 1)
                      if _accepted(S[m], D_strip[i - 1], instance.strip, i)) for m in origins}
    acc_j = {n: tuple(j for j in range(1, instance.stack.n + 1)
                      if _accepted(R[n], D_stack[j - 1], instance.stack, j)) for n in destinations}
    return ScenarioData(S, R, acc_i, acc_j, {c: float(h) for c, h in H.items() if h != 0.0},
                        tuple(D_strip), tuple(D_stack), instance.distance,
                        instance.cost_rate, instance.outsourcing_penalty)


def scenario_data(instance: CddpInstance, sid: int, H: Mapping[Cell, float] | None = None) -> ScenarioData:
    """Derived data for scenario ``sid``, optionally with replaced volumes."""
    s = instance.scenario(sid)
    return derive_scenario_data(instance, s.H if H is None else H, s.D_strip, s.D_stack,
                                s.origins, s.destinations, label=str(sid))


# ---------------------------------------------------------------------------
# nominal distribution

def default_nominal(instance: CddpInstance) -> NominalDistribution:
    weights: dict[int, float] = {}
    group_of: dict[int, int] = {}
    params: dict[int, list[Cell]] = {}
    for g in instance.scenario_groups:
        cells: dict[Cell, None] = {}
        for sid in g.scenarios:
            group_of[sid] = g.id
            weights[sid] = float(Fraction(g.weight) / len(g.scenarios))
            for c in sorted(instance.scenario(sid).H):
                cells.setdefault(c, None)
        params[g.id] = sorted(cells)
    ids = [sid for g in instance.scenario_groups for sid in g.scenarios]
    return NominalDistribution(ids, weights, group_of, params,
                               {g.id: float(g.weight) for g in instance.scenario_groups})


# ---------------------------------------------------------------------------
# generator

GroupShape = tuple[int, int, int, int, int, int]   # (|Omega|, nM, nN, nI, nJ, |H|)

SHAPES: dict[str, list[GroupShape]] = {
    "I1": [(5, 8, 8, 4, 4, 17)],
    "I3": [(5, 8, 8, 4, 4, 17), (5, 10, 10, 5, 5, 26)],
    "I7": [(5, 8, 8, 4, 4, 17), (5, 10, 10, 5, 5, 26),
           (5, 15, 15, 6, 6, 57), (5, 20, 20, 10, 10, 101)],
}


@dataclass
class GeneratorConfig:
    volume_range: tuple[float, float] = (5.0, 50.0)
    distance_range: tuple[int, int] = (1, 10)
    levels: tuple[float, ...] = (0.6, 1.0, 1.5)
    capacity_slack: float = 1.25
    level_fixed_cost: float = 200.0
    level_unit_cost: float = 2.5
    cost_jitter: float = 0.2
    cost_rate: float = 1.0
    penalty_factor: float = 2.0
    partial_disruption_prob: float = 0.0
    partial_disruption_range: tuple[float, float] = (0.1, 0.5)
    max_strip_doors: int | None = None
    max_stack_doors: int | None = None


def parse_shape(text: str) -> list[GroupShape]:
    """``I1``/``I3``/``I7`` or ``"5,8,8,4,4,17;5,10,10,5,5,26"``."""
    if text in SHAPES:
        return list(SHAPES[text])
    out = []
    for part in text.replace(" ", "").split(";"):
        if not part:
            continue
        vals = tuple(int(v) for v in part.strip("()").split(","))
        if len(vals) != 6:
            raise InstanceError(f"shape group {part!r} needs 6 integers")
        out.append(vals)
    if not out:
        raise InstanceError(f"empty shape {text!r}")
    return out


def generate_instance(seed: int, shape: Sequence[GroupShape] | str,
                      config: GeneratorConfig | None = None) -> CddpInstance:
    cfg = config or GeneratorConfig()
    groups = parse_shape(shape) if isinstance(shape, str) else [tuple(g) for g in shape]
    for g, (n_sc, nM, nN, nI, nJ, nH) in enumerate(groups):
        if min(n_sc, nM, nN, nI, nJ) < 1 or nH < 0:
            raise InstanceError(f"group {g}: dimensions must be positive")
        if nH > nM * nN:
            raise InstanceError(f"group {g}: |H|={nH} exceeds nM*nN={nM * nN}")
    n_strip = max(g[3] for g in groups)
    n_stack = max(g[4] for g in groups)
    total_sc = sum(g[0] for g in groups)

    rng = substream(seed, "distance")
    lo, hi = cfg.distance_range
    distance = rng.integers(lo, hi + 1, size=(n_strip, n_stack)).astype(float)

    scenarios: list[Scenario] = []
    sgroups: list[ScenarioGroup] = []
    sid = 0
    vlo, vhi = cfg.volume_range
    for g, (n_sc, nM, nN, nI, nJ, nH) in enumerate(groups):
        cells_rng = substream(seed, "cells", g)
        flat = np.sort(cells_rng.choice(nM * nN, size=nH, replace=False))
        cells = [(int(c // nN), int(c % nN)) for c in flat]
        ids = []
        for s in range(n_sc):
            H = {}
            for (m, n) in cells:
                r = substream(seed, "h", g, s, (m, n))
                H[(m, n)] = round(float(r.uniform(vlo, vhi)), 2)
            D_strip = [1.0 if i >= nI else 0.0 for i in range(n_strip)]
            D_stack = [1.0 if j >= nJ else 0.0 for j in range(n_stack)]
            if cfg.partial_disruption_prob > 0:
                for side, D, k in (("strip", D_strip, nI), ("stack", D_stack, nJ)):
                    for d in range(k):
                        r = substream(seed, "d", g, s, side, d)
                        if r.random() < cfg.partial_disruption_prob:
                            D[d] = round(float(r.uniform(*cfg.partial_disruption_range)), 3)
            scenarios.append(Scenario(sid, g, tuple(range(nM)), tuple(range(nN)), H,
                                      tuple(D_strip), tuple(D_stack)))
            ids.append(sid)
            sid += 1
        sgroups.append(ScenarioGroup(g, tuple(ids), Fraction(n_sc, total_sc)))

    # door capacities sized from the busiest scenario's volume per active door
    def side(n_doors: int, active: Sequence[int], tag: str, max_doors: int | None) -> DoorSide:
        doors = []
        peak = max(sum(s.H.values()) / active[s.group] for s in scenarios)
        base = cfg.capacity_slack * peak
        for d in range(n_doors):
            r = substream(seed, "levels", tag, d)
            levels = []
            jitter = 1.0 + cfg.cost_jitter * float(r.uniform(-1.0, 1.0))
            for f in cfg.levels:
                cap = round(base * f, 1)
                cost = round((cfg.level_fixed_cost + cfg.level_unit_cost * cap) * jitter, 2)
                levels.append(CapacityLevel(cap, cost))
            doors.append(Door(tuple(levels)))
        return DoorSide(tuple(doors), max_doors or n_doors)

    strip = side(n_strip, [g[3] for g in groups], "strip", cfg.max_strip_doors)
    stack = side(n_stack, [g[4] for g in groups], "stack", cfg.max_stack_doors)
    max_vol = max(sum(s.H.values()) for s in scenarios)
    penalty = float(math.ceil(cfg.penalty_factor * cfg.cost_rate * distance.max() * max(max_vol, 1.0)))
    inst = CddpInstance(strip, stack, distance, penalty, sgroups, scenarios, cfg.cost_rate,
                        meta={"seed": int(seed), "shape": [list(g) for g in groups]})
    return inst


# ---------------------------------------------------------------------------
# JSON I/O

def _side_json(side: DoorSide) -> dict:
    return {"max_doors": side.max_doors,
            "doors": [{"levels": [{"capacity": lv.capacity, "cost": lv.cost} for lv in d.levels]}
                      for d in side.doors]}


def instance_to_dict(inst: CddpInstance) -> dict:
    nd = inst.nominal
    return {
        "version": FORMAT_VERSION,
        "meta": inst.meta,
        "strip": _side_json(inst.strip),
        "stack": _side_json(inst.stack),
        "distance": inst.distance.tolist(),
        "outsourcing_penalty": inst.outsourcing_penalty,
        "cost_rate": inst.cost_rate,
        "scenario_groups": [{"id": g.id, "scenarios": list(g.scenarios),
                             "weight": str(Fraction(g.weight))} for g in inst.scenario_groups],
        "scenarios": [{"id": s.id, "group": s.group, "origins": list(s.origins),
                       "destinations": list(s.destinations),
                       "H": [[m, n, v] for (m, n), v in sorted(s.H.items())],
                       "D_strip": list(s.D_strip), "D_stack": list(s.D_stack)}
                      for s in inst.scenarios],
        "nominal": {
            "weights": [[sid, nd.weights[sid]] for sid in nd.scenario_ids],
            "group_parameters": [[g, [list(c) for c in cells]]
                                 for g, cells in sorted(nd.group_parameters.items())],
        },
    }


def write_instance(inst: CddpInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=1) + "\n")


class _Ctx:
    """Field access that reports the JSON path of whatever is missing."""

    def __init__(self, data, path: str = "$"):
        self.data, self.path = data, path

    def __call__(self, key, kind=None):
        if not isinstance(self.data, dict):
            raise InstanceError(f"{self.path}: expected an object")
        if key not in self.data:
            raise InstanceError(f"{self.path}: missing field {key!r}")
        v = self.data[key]
        if kind is not None and not isinstance(v, kind):
            raise InstanceError(f"{self.path}.{key}: expected {getattr(kind, '__name__', kind)}")
        return v

    def sub(self, key, idx=None):
        v = self(key)
        path = f"{self.path}.{key}"
        if idx is not None:
            v = v[idx]
            path += f"[{idx}]"
        return _Ctx(v, path)


def _side_from(ctx: _Ctx) -> DoorSide:
    doors = []
    for d, door in enumerate(ctx("doors", list)):
        dc = _Ctx(door, f"{ctx.path}.doors[{d}]")
        levels = []
        for k, lv in enumerate(dc("levels", list)):
            lc = _Ctx(lv, f"{dc.path}.levels[{k}]")
            levels.append(CapacityLevel(float(lc("capacity")), float(lc("cost"))))
        doors.append(Door(tuple(levels)))
    return DoorSide(tuple(doors), int(ctx("max_doors")))


def instance_from_dict(data: dict) -> CddpInstance:
    c = _Ctx(data)
    version = c("version")
    if version != FORMAT_VERSION:
        raise InstanceError(f"$.version: unsupported format version {version!r}")
    strip = _side_from(c.sub("strip"))
    stack = _side_from(c.sub("stack"))
    distance = np.array(c("distance", list), dtype=float)
    penalty = float(c("outsourcing_penalty"))
    cost_rate = float(c("cost_rate"))
    groups = []
    for k, g in enumerate(c("scenario_groups", list)):
        gc = _Ctx(g, f"$.scenario_groups[{k}]")
        groups.append(ScenarioGroup(int(gc("id")), tuple(int(s) for s in gc("scenarios", list)),
                                    Fraction(str(gc("weight")))))
    scenarios = []
    for k, s in enumerate(c("scenarios", list)):
        sc = _Ctx(s, f"$.scenarios[{k}]")
        H = {}
        for t, trip in enumerate(sc("H", list)):
            if len(trip) != 3:
                raise InstanceError(f"{sc.path}.H[{t}]: expected [m, n, value]")
            H[(int(trip[0]), int(trip[1]))] = float(trip[2])
        scenarios.append(Scenario(int(sc("id")), int(sc("group")),
                                  tuple(int(v) for v in sc("origins", list)),
                                  tuple(int(v) for v in sc("destinations", list)), H,
                                  tuple(float(v) for v in sc("D_strip", list)),
                                  tuple(float(v) for v in sc("D_stack", list))))
    inst = CddpInstance(strip, stack, distance, penalty, groups, scenarios, cost_rate,
                        meta=dict(data.get("meta", {})))
    if "nominal" in data:
        ndc = c.sub("nominal")
        nd = inst.nominal
        w = {int(sid): float(v) for sid, v in ndc("weights", list)}
        if set(w) != set(nd.weights):
            raise InstanceError("$.nominal.weights: scenario ids do not match $.scenarios")
        nd.weights = w
        nd.group_parameters = {int(g): [tuple(cell) for cell in cells]
                               for g, cells in ndc("group_parameters", list)}
    for s in inst.scenarios:
        scenario_data(inst, s.id)   # validates volumes and disruptions
    return inst


def read_instance(path: str | Path) -> CddpInstance:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return instance_from_dict(data)
