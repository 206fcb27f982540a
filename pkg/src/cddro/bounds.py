"""Cluster-decomposition lower bounds, min-max upper bounds, SD feasibility
audit and Lagrangean-decomposition bounds.

Every bound is taken from a solver's proven bound (``best_bound``) or from a
feasible point, so node or time limits weaken the numbers but never
invalidate them.  Node limits are the default stopping rule because a wall
clock limit makes results depend on machine load.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

from .ambiguity import AmbiguityMember
from .dro_models import (RN, SD, Cluster, ClusterScheme, FirstStageDesign, SdConfig,
                         block_tag, build_cdap, build_cluster_scheme, build_lip_rn, build_lip_sd,
                         build_scd_submodel, default_sd_bounds, fix_first_stage, member_scenario_data)
from .heuristics import (assignment_cost, assignment_start, design_start, door_capacities,
                         improve_design, local_search)
from .instance import CddpInstance
from .milp import MilpSolution, solve_lp, solve_milp
from .milp.model import CONTINUOUS, EQ, LE, vname

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["z_L", "t_L", "z_H_lower", "t_H_lower", "z_H_upper", "t_H_upper",
                  "C1_H", "F_H", "GAP_H", "GR_H"]


@dataclass
class SolveLimits:
    time_limit: float = 60.0
    node_limit: int = 1_000_000
    gap_limit: float = 0.0

    def run(self, model, start=None) -> MilpSolution:
        return solve_milp(model, time_limit=self.time_limit, node_limit=self.node_limit,
                          gap_limit=self.gap_limit, start=start)


def _limited(sol: MilpSolution) -> str | None:
    if sol.status in (MilpSolution.TIME_LIMIT, MilpSolution.GAP_LIMIT):
        return getattr(sol, "limit_reason", None) or sol.status
    return None


def parallel_map(fn: Callable, jobs: Sequence, threads: int = 1) -> list:
    """Ordered map; results do not depend on the worker count."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=threads, mp_context=ctx) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------------------
# lower bound

@dataclass
class ClusterResult:
    cluster: int
    member: int
    status: str
    bound: float | None         # proven lower bound on the submodel optimum
    objective: float | None     # incumbent value
    design: FirstStageDesign | None
    c1: float | None
    nodes: int
    limit: str | None
    seconds: float


def _cluster_start(inst, member, cluster: Cluster) -> dict[str, float]:
    sds = [member_scenario_data(inst, member, s) for s in cluster.scenarios]
    design, _ = improve_design(inst, sds, [cluster.inner[s] for s in cluster.scenarios])
    start = design_start(inst, design)
    for sid, sd in zip(cluster.scenarios, sds):
        cs, ck = door_capacities(inst, design, sd)
        xa, ya, _ = local_search(sd, cs, ck)
        start.update(assignment_start(xa, ya, sd, block_tag(0, sid)))
    return start


def _solve_cluster(job) -> ClusterResult:
    variant, inst, members, cluster, sd_config, sd_bounds, limits = job
    t0 = time.monotonic()
    bm = build_scd_submodel(variant, inst, members, cluster, sd_config, sd_bounds)
    start = _cluster_start(inst, members[cluster.member], cluster)
    if variant == SD:
        start["gamma"] = 0.0
    sol = limits.run(bm.model, start)
    design = FirstStageDesign.from_values(inst, sol.values) if sol.has_solution else None
    bound = sol.best_bound if math.isfinite(sol.best_bound) else None
    if sol.status == MilpSolution.OPTIMAL:
        bound = sol.objective
    return ClusterResult(cluster.id, cluster.member, sol.status, bound, sol.objective, design,
                         design.cost(inst) if design else None, sol.nodes, _limited(sol),
                         time.monotonic() - t0)


@dataclass
class LowerBound:
    z_lp: float | None
    lp_status: str
    clusters: list[ClusterResult]
    member_sums: dict[int, float | None]
    z_lb: float | None
    lp_seconds: float = 0.0


def lp_relaxation(variant: str, inst: CddpInstance, members: Sequence[AmbiguityMember],
                  sd_config: SdConfig | None = None, time_limit: float | None = None) -> MilpSolution:
    bm = build_lip_rn(inst, members) if variant == RN else build_lip_sd(inst, members, sd_config)
    return solve_lp(bm.model, time_limit=time_limit)


def lower_bound(variant: str, inst: CddpInstance, members: Sequence[AmbiguityMember],
                scheme: ClusterScheme, sd_config: SdConfig | None = None,
                limits: SolveLimits | None = None, threads: int = 1,
                lp_time_limit: float | None = None) -> LowerBound:
    """max{z_LP, max_p sum_c w^c z^c} with each z^c a proven submodel bound."""
    limits = limits or SolveLimits()
    sd_bounds = default_sd_bounds(inst, members, sd_config) if variant == SD else None
    t0 = time.monotonic()
    lp = lp_relaxation(variant, inst, members, sd_config, lp_time_limit)
    lp_seconds = time.monotonic() - t0
    z_lp = lp.objective if lp.status == MilpSolution.OPTIMAL else None
    jobs = [(variant, inst, list(members), c, sd_config, sd_bounds, limits) for c in scheme.clusters]
    results = parallel_map(_solve_cluster, jobs, threads)
    sums: dict[int, float | None] = {}
    for p in range(len(members)):
        total = 0.0
        for c in scheme.member_clusters(p):
            r = results[c.id]
            if r.bound is None:
                log.warning("cluster %d has no bound (%s); member %d skipped", c.id, r.status, p)
                total = None
                break
            total += c.weight * r.bound
        sums[p] = total
    cands = [v for v in sums.values() if v is not None]
    if z_lp is not None:
        cands.append(z_lp)
    z_lb = max(cands) if cands else None
    return LowerBound(z_lp, lp.status, results, sums, z_lb, lp_seconds)


# ---------------------------------------------------------------------------
# upper bound

@dataclass
class CandidateEval:
    clusters: list[int]              # clusters that proposed this design
    design: FirstStageDesign
    c1: float
    costs: dict[tuple[int, int], float]   # (member, scenario) -> F
    member_costs: dict[int, float]   # sum_w w F per member
    value: float | None
    feasible: bool = True
    relaxed: bool = False            # SD: expected-surplus rows dropped
    violations: dict[tuple[int, int], float] = field(default_factory=dict)
    limits: list[str] = field(default_factory=list)
    seconds: float = 0.0
    selected_member: int | None = None   # SD: member with gamma = 1


def _solve_cdap(job):
    inst, member, sid, design, limits = job
    t0 = time.monotonic()
    model, F = build_cdap(inst, member, sid, design)
    sd = member_scenario_data(inst, member, sid)
    cs, ck = door_capacities(inst, design, sd)
    xa, ya, fh = local_search(sd, cs, ck)
    sol = limits.run(model, assignment_start(xa, ya, sd, "s"))
    if sol.has_solution:
        value = sol.objective
    else:
        # no incumbent within limits: the heuristic point is still feasible
        value = assignment_cost(sd, xa, ya)
    return value, _limited(sol), time.monotonic() - t0


def _distinct_designs(results: Sequence[ClusterResult]) -> list[tuple[FirstStageDesign, list[int]]]:
    seen: dict[FirstStageDesign, list[int]] = {}
    for r in results:
        if r.design is not None:
            seen.setdefault(r.design, []).append(r.cluster)
    return list(seen.items())


def upper_bound_rn(inst: CddpInstance, members: Sequence[AmbiguityMember],
                   designs: Sequence[tuple[FirstStageDesign, list[int]]],
                   limits: SolveLimits | None = None, threads: int = 1) -> list[CandidateEval]:
    """Fixed-design evaluation; scenario blocks decouple, one small MILP each."""
    limits = limits or SolveLimits()
    jobs, keys = [], []
    for k, (design, _) in enumerate(designs):
        for p, mem in enumerate(members):
            for sid in mem.scenarios:
                jobs.append((inst, mem, sid, design, limits))
                keys.append((k, p, sid))
    out = parallel_map(_solve_cdap, jobs, threads)
    evals = []
    for k, (design, cl) in enumerate(designs):
        costs, lims, secs = {}, [], 0.0
        for key, (val, lim, sec) in zip(keys, out):
            if key[0] == k:
                costs[key[1], key[2]] = val
                secs = max(secs, sec)
                if lim:
                    lims.append(f"{key[1]}/{key[2]}:{lim}")
        mc = {p: sum(mem.weights[s] * costs[p, s] for s in mem.scenarios) for p, mem in enumerate(members)}
        c1 = design.cost(inst)
        evals.append(CandidateEval(cl, design, c1, costs, mc, c1 + max(mc.values()), limits=lims, seconds=secs))
    return evals


def sd_feasibility_audit(values: dict[str, float], members: Sequence[AmbiguityMember],
                         sd_config: SdConfig) -> dict[tuple[int, int], float]:
    """max(0, sum_w w s - expected cap) per (member, profile) from surplus values."""
    out = {}
    for p, mem in enumerate(members):
        for b, pr in enumerate(sd_config.profiles):
            exp = sum(mem.weights[s] * values.get(vname("s", b, tag=block_tag(p, s)), 0.0)
                      for s in mem.scenarios)
            out[p, b] = max(0.0, exp - pr.expected_cap)
    return out


def _minimal_surplus(values: dict[str, float], members, sd_config) -> dict[str, float]:
    vals = dict(values)
    for p, mem in enumerate(members):
        for s in mem.scenarios:
            c12p = vals.get(vname("C12p", tag=block_tag(p, s)), 0.0)
            for b, pr in enumerate(sd_config.profiles):
                vals[vname("s", b, tag=block_tag(p, s))] = max(0.0, c12p - pr.threshold)
    return vals


def _sd_start(inst, members, design, sd_bounds) -> dict[str, float]:
    start = design_start(inst, design)
    costs = {}
    for p, mem in enumerate(members):
        tot = design.cost(inst)
        for sid in mem.scenarios:
            sd = member_scenario_data(inst, mem, sid)
            cs, ck = door_capacities(inst, design, sd)
            xa, ya, f = local_search(sd, cs, ck)
            start.update(assignment_start(xa, ya, sd, block_tag(p, sid)))
            tot += mem.weights[sid] * f
        costs[p] = tot
    top = max(costs, key=lambda p: (costs[p], -p))
    for p in range(len(members)):
        start[vname("gamma", tag=f"p{p}")] = 1.0 if p == top else 0.0
    return start


def _solve_restricted_sd(job) -> CandidateEval:
    inst, members, design, clusters, sd_config, sd_bounds, limits = job
    t0 = time.monotonic()
    cfg = SdConfig(sd_config.profiles, *sd_bounds)
    start = _sd_start(inst, members, design, sd_bounds)
    relaxed = False
    bm = build_lip_sd(inst, members, cfg)
    sol = limits.run(fix_first_stage(bm.model, inst, design), start)
    if sol.status == MilpSolution.INFEASIBLE:
        relaxed = True
        bm = build_lip_sd(inst, members, cfg, expected_caps=False)
        sol = limits.run(fix_first_stage(bm.model, inst, design), start)
    c1 = design.cost(inst)
    lims = [f"restricted:{_limited(sol)}"] if _limited(sol) else []
    if not sol.has_solution:
        return CandidateEval(clusters, design, c1, {}, {}, None, feasible=False, relaxed=relaxed,
                             limits=lims, seconds=time.monotonic() - t0)
    costs = bm.scenario_costs(sol)
    mc = {p: sum(mem.weights[s] * costs[p, s] for s in mem.scenarios) for p, mem in enumerate(members)}
    vals = _minimal_surplus(sol.values, members, sd_config) if relaxed else sol.values
    viol = sd_feasibility_audit(vals, members, sd_config)
    feasible = not relaxed or all(v <= 1e-9 for v in viol.values())
    chosen = next(p for p in range(len(members)) if sol.values[vname("gamma", tag=f"p{p}")] > 0.5)
    return CandidateEval(clusters, design, c1, costs, mc, c1 + max(mc.values()), feasible=feasible,
                         relaxed=relaxed, violations=viol, limits=lims, seconds=time.monotonic() - t0,
                         selected_member=chosen)


def upper_bound_sd(inst, members, designs, sd_config: SdConfig, limits: SolveLimits | None = None,
                   threads: int = 1) -> list[CandidateEval]:
    limits = limits or SolveLimits()
    sd_bounds = default_sd_bounds(inst, members, sd_config)
    jobs = [(inst, list(members), d, cl, sd_config, sd_bounds, limits) for d, cl in designs]
    return parallel_map(_solve_restricted_sd, jobs, threads)


def select_candidate(evals: Sequence[CandidateEval]) -> CandidateEval | None:
    """Lowest value among feasible candidates; ties to lower C1, then lower cluster id.
    Falls back to relaxed (audited) candidates when none is feasible."""
    pool = [e for e in evals if e.value is not None and e.feasible]
    if not pool:
        pool = [e for e in evals if e.value is not None]
    if not pool:
        return None
    return min(pool, key=lambda e: (e.value, e.c1, min(e.clusters)))


# ---------------------------------------------------------------------------
# Lagrangean decomposition

@dataclass
class LagrangeMultipliers:
    """lam[(c, k, i)], mu[(c, k, j)] price the within-member copy cycles;
    phi[(p, b)] prices the expected-surplus rows (SD only)."""
    lam: dict[tuple[int, int, int], float] = field(default_factory=dict)
    mu: dict[tuple[int, int, int], float] = field(default_factory=dict)
    phi: dict[tuple[int, int], float] = field(default_factory=dict)

    @classmethod
    def zero(cls, inst: CddpInstance, scheme: ClusterScheme, n_profiles: int = 0) -> "LagrangeMultipliers":
        lm = cls()
        for c in scheme.clusters:
            for d in range(1, inst.strip.n + 1):
                for k in range(1, len(inst.strip.doors[d - 1].levels) + 1):
                    lm.lam[c.id, k, d] = 0.0
            for d in range(1, inst.stack.n + 1):
                for k in range(1, len(inst.stack.doors[d - 1].levels) + 1):
                    lm.mu[c.id, k, d] = 0.0
        for p in sorted({c.member for c in scheme.clusters}):
            for b in range(n_profiles):
                lm.phi[p, b] = 0.0
        return lm

    def validate(self) -> None:
        for name in ("lam", "mu", "phi"):
            for key, v in getattr(self, name).items():
                if not v >= 0.0:
                    raise ValueError(f"multiplier {name}{key} = {v} must be non-negative")

    def project(self) -> None:
        for name in ("lam", "mu", "phi"):
            d = getattr(self, name)
            for key in d:
                d[key] = max(0.0, d[key])


@dataclass
class LdResult:
    value: float                         # -inf when some submodel is unbounded
    member_values: dict[int, float]
    cluster_values: dict[int, float]
    unbounded_cluster: int | None
    subgradient: LagrangeMultipliers     # residuals of the dualized rows


def _ld_cluster_model(variant, inst, members, cluster, scheme, lm, sd_config, sd_bounds):
    """Cluster submodel with the priced first stage.  SD variant: surplus rows
    enforced for every scenario of the cluster (the member is assumed to
    carry the robust cost) and expected surplus priced by phi."""
    mem = members[cluster.member]
    bm = build_scd_submodel(RN, inst, members, cluster)
    m = bm.model
    m.set_obj(m.var("u"), cluster.weight)
    prev = scheme.prev_in_member(cluster.id)
    for (c, k, d), v in lm.lam.items():
        if c == cluster.id:
            m.set_obj(m.var(vname("alpha", k, d)), v - lm.lam[prev, k, d])
    for (c, k, d), v in lm.mu.items():
        if c == cluster.id:
            m.set_obj(m.var(vname("beta", k, d)), v - lm.mu[prev, k, d])
    if variant == SD:
        c1 = m.var("C1")
        for sid in cluster.scenarios:
            tag = block_tag(0, sid)
            c12 = m.add_var(vname("C12", tag=tag), CONTINUOUS)
            m.add_constr({c12: 1.0, c1: -1.0, m.var(vname("F", tag=tag)): -1.0}, EQ, 0.0,
                         name=vname("C12_def", tag=tag))
            for b, pr in enumerate(sd_config.profiles):
                s = m.add_var(vname("s", b, tag=tag), CONTINUOUS, 0.0, pr.surplus_cap,
                              obj=lm.phi.get((cluster.member, b), 0.0) * mem.weights[sid])
                m.add_constr({c12: 1.0, s: -1.0}, LE, pr.threshold, name=vname("surplus", b, tag=tag))
    return bm


def _solve_ld_cluster(job):
    variant, inst, members, cluster, scheme, lm, sd_config, sd_bounds, limits = job
    bm = _ld_cluster_model(variant, inst, members, cluster, scheme, lm, sd_config, sd_bounds)
    sol = limits.run(bm.model)
    if sol.status == MilpSolution.UNBOUNDED:
        return cluster.id, -math.inf, None, None
    if sol.status == MilpSolution.INFEASIBLE:
        return cluster.id, math.inf, None, None
    bound = sol.objective if sol.status == MilpSolution.OPTIMAL else sol.best_bound
    design = FirstStageDesign.from_values(inst, sol.values) if sol.has_solution else None
    exp = {}
    if variant == SD and sol.has_solution:
        mem = members[cluster.member]
        for b in range(len(sd_config.profiles)):
            exp[b] = sum(mem.weights[s] * sol.values[vname("s", b, tag=block_tag(0, s))]
                         for s in cluster.scenarios)
    return cluster.id, bound, design, exp


def ld_bound(variant: str, inst: CddpInstance, members: Sequence[AmbiguityMember],
             scheme: ClusterScheme, lm: LagrangeMultipliers, sd_config: SdConfig | None = None,
             limits: SolveLimits | None = None, threads: int = 1) -> LdResult:
    """RN: max_p of the member's priced cluster sum.  SD: min_p of the member's
    priced cluster sum minus phi times the expected caps (the optimum's
    selected member is among them)."""
    lm.validate()
    limits = limits or SolveLimits()
    sd_bounds = default_sd_bounds(inst, members, sd_config) if variant == SD else None
    jobs = [(variant, inst, list(members), c, scheme, lm, sd_config, sd_bounds, limits)
            for c in scheme.clusters]
    out = parallel_map(_solve_ld_cluster, jobs, threads)
    cval = {cid: v for cid, v, _, _ in out}
    designs = {cid: d for cid, _, d, _ in out}
    exps = {cid: e for cid, _, _, e in out}
    grad = LagrangeMultipliers()
    unbounded = next((cid for cid, v, _, _ in out if v == -math.inf), None)
    mvals = {}
    for p in range(len(members)):
        total = sum(cval[c.id] for c in scheme.member_clusters(p))
        if variant == SD:
            total -= sum(lm.phi.get((p, b), 0.0) * pr.expected_cap
                         for b, pr in enumerate(sd_config.profiles))
        mvals[p] = total
    if unbounded is not None:
        value = -math.inf
    elif variant == RN:
        value = max(mvals.values())
    else:
        value = min(mvals.values())
    for name, side in (("lam", "strip"), ("mu", "stack")):
        for key in getattr(lm, name):
            c, k, d = key
            here, there = designs.get(c), designs.get(scheme.next_in_member(c))
            if here is None or there is None:
                getattr(grad, name)[key] = 0.0
            else:
                getattr(grad, name)[key] = (float(getattr(here, side)[d - 1] == k)
                                            - float(getattr(there, side)[d - 1] == k))
    if variant == SD:
        for (p, b) in lm.phi:
            parts = [exps[c.id].get(b) for c in scheme.member_clusters(p) if exps.get(c.id)]
            if len(parts) == len(scheme.member_clusters(p)):
                grad.phi[p, b] = sum(parts) - sd_config.profiles[b].expected_cap
            else:
                grad.phi[p, b] = 0.0
    return LdResult(value, mvals, cval, unbounded, grad)


def ld_subgradient_loop(variant: str, inst: CddpInstance, members: Sequence[AmbiguityMember],
                        scheme: ClusterScheme, iterations: int, sd_config: SdConfig | None = None,
                        step_a: float = 1.0, step_b: float = 10.0, limits: SolveLimits | None = None,
                        threads: int = 1) -> tuple[float, list[float]]:
    """Projected subgradient ascent with step a/(b+t); returns (best, per-iteration best)."""
    lm = LagrangeMultipliers.zero(inst, scheme, len(sd_config.profiles) if variant == SD else 0)
    res = ld_bound(variant, inst, members, scheme, lm, sd_config, limits, threads)
    best = res.value
    trace = [best]
    for t in range(iterations):
        step = step_a / (step_b + t)
        for name in ("lam", "mu", "phi"):
            cur, g = getattr(lm, name), getattr(res.subgradient, name)
            for key in cur:
                cur[key] += step * g.get(key, 0.0)
        lm.project()
        res = ld_bound(variant, inst, members, scheme, lm, sd_config, limits, threads)
        best = max(best, res.value)
        trace.append(best)
    return best, trace


# ---------------------------------------------------------------------------
# report

@dataclass
class BoundsReport:
    variant: str
    config: dict
    lower: LowerBound
    candidates: list[CandidateEval]
    selected: CandidateEval | None
    z_ub: float | None
    gap: float | None
    goodness: float | None
    ld_best: float | None = None
    ld_trace: list[float] = field(default_factory=list)
    timings: dict | None = None

    @property
    def z_lb(self) -> float | None:
        return self.lower.z_lb

    def to_dict(self) -> dict:
        def design(d):
            return d.to_dict() if d is not None else None
        return {
            "variant": self.variant,
            "config": self.config,
            "z_LP": self.lower.z_lp,
            "lp_status": self.lower.lp_status,
            "clusters": [{"cluster": r.cluster, "member": r.member, "status": r.status,
                          "z": r.bound, "incumbent": r.objective, "design": design(r.design),
                          "C1": r.c1, "nodes": r.nodes, "limit": r.limit} for r in self.lower.clusters],
            "member_sums": {str(p): v for p, v in self.lower.member_sums.items()},
            "z_LB": self.lower.z_lb,
            "candidates": [{"clusters": e.clusters, "design": design(e.design), "C1": e.c1,
                            "F": {f"{p}/{s}": v for (p, s), v in sorted(e.costs.items())},
                            "member_costs": {str(p): v for p, v in e.member_costs.items()},
                            "value": e.value, "feasible": e.feasible, "relaxed": e.relaxed,
                            "violations": {f"{p}/{b}": v for (p, b), v in sorted(e.violations.items())},
                            "selected_member": e.selected_member,
                            "limits": e.limits} for e in self.candidates],
            "z_UB": self.z_ub,
            "selected": None if self.selected is None else {
                "clusters": self.selected.clusters, "design": design(self.selected.design),
                "C1": self.selected.c1, "F": max(self.selected.member_costs.values()),
                "feasible": self.selected.feasible},
            "GAP_H": self.gap,
            "GR_H": self.goodness,
            "LD": None if self.ld_best is None else {"best": self.ld_best, "trace": self.ld_trace},
            "timings": self.timings,
        }

    def summary_row(self) -> dict:
        t = self.timings or {}
        sel = self.selected
        return {
            "z_L": self.lower.z_lp, "t_L": t.get("lp"),
            "z_H_lower": self.lower.z_lb, "t_H_lower": t.get("lower"),
            "z_H_upper": self.z_ub, "t_H_upper": t.get("upper"),
            "C1_H": sel.c1 if sel else None,
            "F_H": max(sel.member_costs.values()) if sel else None,
            "GAP_H": self.gap, "GR_H": self.goodness,
        }

    def summary_csv(self) -> str:
        return summary_csv(self.summary_row())


def summary_csv(row: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def gap_percent(z_ub: float | None, z_lp: float | None, z_lb: float | None) -> float | None:
    lows = [v for v in (z_lp, z_lb) if v is not None]
    if z_ub is None or not lows or z_ub == 0:
        return None
    return 100.0 * (z_ub - max(lows)) / z_ub


def run_bounds(variant: str, inst: CddpInstance, members: Sequence[AmbiguityMember],
               clusters_per_member: int = 2, sd_config: SdConfig | None = None,
               sub_limits: SolveLimits | None = None, eval_limits: SolveLimits | None = None,
               ld_iterations: int = 0, reference: float | None = None, threads: int = 1,
               lp_time_limit: float | None = None, timings: bool = False) -> BoundsReport:
    if variant == SD and sd_config is None:
        raise ValueError("SD bounds need an SD configuration")
    sub_limits = sub_limits or SolveLimits()
    eval_limits = eval_limits or SolveLimits()
    scheme = build_cluster_scheme(members, clusters_per_member)
    t0 = time.monotonic()
    lower = lower_bound(variant, inst, members, scheme, sd_config, sub_limits, threads, lp_time_limit)
    t1 = time.monotonic()
    designs = _distinct_designs(lower.clusters)
    if variant == RN:
        evals = upper_bound_rn(inst, members, designs, eval_limits, threads)
    else:
        evals = upper_bound_sd(inst, members, designs, sd_config, eval_limits, threads)
    t2 = time.monotonic()
    sel = select_candidate(evals)
    z_ub = sel.value if sel else None
    ld_best, trace = None, []
    if ld_iterations > 0:
        ld_best, trace = ld_subgradient_loop(variant, inst, members, scheme, ld_iterations,
                                             sd_config, limits=sub_limits, threads=threads)
    t3 = time.monotonic()
    config = {"variant": variant, "clusters_per_member": clusters_per_member,
              "members": [m.name for m in members],
              "sub_limits": asdict(sub_limits), "eval_limits": asdict(eval_limits),
              "ld_iterations": ld_iterations, "reference": reference,
              "lp_time_limit": lp_time_limit,
              "sd_config": sd_config.to_dict() if sd_config else None}
    tm = None
    if timings:
        # parallel phases report the slowest cell, as with one worker per cell
        tm = {"lp": lower.lp_seconds,
              "lower": max([r.seconds for r in lower.clusters], default=0.0),
              "upper": max([e.seconds for e in evals], default=0.0),
              "wall_lower": t1 - t0, "wall_upper": t2 - t1, "wall_ld": t3 - t2}
    return BoundsReport(variant, config, lower, evals, sel, z_ub,
                        gap_percent(z_ub, lower.z_lp, lower.z_lb),
                        (z_ub / reference) if (reference and z_ub is not None) else None,
                        ld_best, trace, tm)
