"""Model builders: risk-neutral and stochastic-dominance DRO models, their
split-variable (cluster copy) equivalents, and the cluster submodels.

Naming (doors 1-based, door 0 = outsourcing, ``@tag`` marks the block):

* first stage ``alpha[k,i]``, ``beta[k,j]``, ``C1`` (``@c<id>`` for cluster copies)
* second stage per member/scenario ``@p<pos>w<sid>``: ``x[m,i]``, ``y[n,j]``,
  ``a0``, ``b0``, ``v[m,i,n,j]``, ``F``
* robust cost ``u`` (``u@c<id>`` for copies); SD adds ``gamma@p<pos>``,
  ``up@p<pos>``, ``C12``/``C12p``/``s[b]`` per block.

Linearization columns ``v`` are only created for cells with positive volume:
cells without volume carry zero cost and any 0/1 pair of marginals admits a
matching flow, so dropping them changes neither feasibility nor cost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ambiguity import AmbiguityMember
from .instance import OUTSOURCE, CddpInstance, ScenarioData, derive_scenario_data
from .milp.model import BINARY, CONTINUOUS, EQ, GE, INF, LE, MilpModel, MilpSolution, vname

RN, SD = "rn", "sd"


class BuildError(ValueError):
    pass


# ---------------------------------------------------------------------------
# designs

@dataclass(frozen=True)
class FirstStageDesign:
    """Installed level per door (0 = door not built)."""
    strip: tuple[int, ...]
    stack: tuple[int, ...]

    def cost(self, inst: CddpInstance) -> float:
        c = 0.0
        for side, levels in ((inst.strip, self.strip), (inst.stack, self.stack)):
            for d, k in enumerate(levels):
                if k:
                    c += side.doors[d].levels[k - 1].cost
        return c

    def validate(self, inst: CddpInstance) -> None:
        for name, side, levels in (("strip", inst.strip, self.strip), ("stack", inst.stack, self.stack)):
            if len(levels) != side.n:
                raise BuildError(f"{name} design has {len(levels)} doors, instance has {side.n}")
            for d, k in enumerate(levels):
                if not 0 <= k <= len(side.doors[d].levels):
                    raise BuildError(f"{name} door {d + 1}: level {k} does not exist")
            if sum(1 for k in levels if k) > side.max_doors:
                raise BuildError(f"{name} design opens more than {side.max_doors} doors")

    @classmethod
    def closed(cls, inst: CddpInstance) -> "FirstStageDesign":
        return cls((0,) * inst.strip.n, (0,) * inst.stack.n)

    @classmethod
    def from_values(cls, inst: CddpInstance, values: Mapping[str, float],
                    tag: str | None = None) -> "FirstStageDesign":
        def read(side, base):
            out = []
            for d in range(1, side.n + 1):
                lvl = 0
                for k in range(1, len(side.doors[d - 1].levels) + 1):
                    if values.get(vname(base, k, d, tag=tag), 0.0) > 0.5:
                        lvl = k
                out.append(lvl)
            return tuple(out)
        return cls(read(inst.strip, "alpha"), read(inst.stack, "beta"))

    def to_dict(self) -> dict:
        return {"strip": list(self.strip), "stack": list(self.stack)}


# ---------------------------------------------------------------------------
# SD configuration and cluster scheme

@dataclass
class SdProfile:
    threshold: float
    surplus_cap: float
    expected_cap: float


@dataclass
class SdConfig:
    profiles: list[SdProfile]
    u_lo: float | None = None
    u_hi: float | None = None
    c_hi: float | None = None

    def validate(self) -> None:
        if self.u_lo is not None and self.u_hi is not None and self.u_lo > self.u_hi:
            raise BuildError(f"lower bound {self.u_lo} exceeds upper bound {self.u_hi}")
        for b, pr in enumerate(self.profiles):
            if pr.surplus_cap < 0 or pr.expected_cap > pr.surplus_cap:
                raise BuildError(f"profile {b}: need 0 <= expected cap <= surplus cap")
            if self.c_hi is not None and pr.surplus_cap > self.c_hi:
                raise BuildError(f"profile {b}: surplus cap above the total-cost bound")

    def to_dict(self) -> dict:
        return {"profiles": [vars(p) for p in self.profiles],
                "u_lo": self.u_lo, "u_hi": self.u_hi, "c_hi": self.c_hi}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SdConfig":
        return cls([SdProfile(float(p["threshold"]), float(p["surplus_cap"]),
                              float(p["expected_cap"])) for p in d["profiles"]],
                   d.get("u_lo"), d.get("u_hi"), d.get("c_hi"))


@dataclass
class Cluster:
    id: int
    member: int             # position of the member in P
    scenarios: tuple[int, ...]
    weight: float           # sum of member weights over the cluster
    inner: dict[int, float]  # member weight / cluster weight


@dataclass
class ClusterScheme:
    clusters: list[Cluster]

    def member_clusters(self, p: int) -> list[Cluster]:
        return [c for c in self.clusters if c.member == p]

    def next(self, c: int) -> int:
        return (c + 1) % len(self.clusters)

    def prev(self, c: int) -> int:
        return (c - 1) % len(self.clusters)

    def next_in_member(self, c: int) -> int:
        own = [k.id for k in self.member_clusters(self.clusters[c].member)]
        return own[(own.index(c) + 1) % len(own)]

    def prev_in_member(self, c: int) -> int:
        own = [k.id for k in self.member_clusters(self.clusters[c].member)]
        return own[(own.index(c) - 1) % len(own)]

    def cluster_of(self, p: int, sid: int) -> int:
        for c in self.member_clusters(p):
            if sid in c.scenarios:
                return c.id
        raise KeyError((p, sid))


def build_cluster_scheme(members: Sequence[AmbiguityMember], per_member: int = 2) -> ClusterScheme:
    """Contiguous, near-equal blocks of each member's ordered scenario list."""
    if per_member < 1:
        raise BuildError("need at least one cluster per member")
    clusters = []
    for p, mem in enumerate(members):
        sids = list(mem.scenarios)
        k = min(per_member, len(sids))
        for block in np.array_split(np.arange(len(sids)), k):
            sc = tuple(sids[i] for i in block)
            wc = sum(mem.weights[s] for s in sc)
            clusters.append(Cluster(len(clusters), p, sc, wc,
                                    {s: mem.weights[s] / wc if wc > 0 else 1.0 / len(sc) for s in sc}))
    return ClusterScheme(clusters)


# ---------------------------------------------------------------------------
# building blocks

def member_scenario_data(inst: CddpInstance, member: AmbiguityMember, sid: int) -> ScenarioData:
    s = inst.scenario(sid)
    return derive_scenario_data(inst, member.volumes(sid), s.D_strip, s.D_stack,
                                s.origins, s.destinations, label=f"{member.name}/{sid}")


def max_second_stage(sd: ScenarioData) -> float:
    """Cost of the most expensive assignment (everything outsourced or worse)."""
    return 2 * sd.penalty + sum(max(sd.penalty, sd.cost_rate * float(sd.distance.max(initial=0)) * h)
                                for h in sd.H.values())


def max_first_stage(inst: CddpInstance) -> float:
    return sum(max((lv.cost for lv in d.levels), default=0.0)
               for side in (inst.strip, inst.stack) for d in side.doors)


class _Builder:
    def __init__(self, inst: CddpInstance, members: Sequence[AmbiguityMember], name: str):
        if not members:
            raise BuildError("empty ambiguity set")
        for mem in members:
            if not mem.scenarios:
                raise BuildError(f"member {mem.name} has no scenario")
        self.inst = inst
        self.members = list(members)
        self.model = MilpModel(name)
        self._sd_cache: dict[tuple[int, int], ScenarioData] = {}

    def data(self, p: int, sid: int) -> ScenarioData:
        key = (p, sid)
        if key not in self._sd_cache:
            self._sd_cache[key] = member_scenario_data(self.inst, self.members[p], sid)
        return self._sd_cache[key]

    def first_stage(self, tag: str | None = None) -> tuple[dict, dict, int]:
        m, inst = self.model, self.inst
        alpha, beta = {}, {}
        for side, base, store, cap_name in ((inst.strip, "alpha", alpha, "open_strip"),
                                            (inst.stack, "beta", beta, "open_stack")):
            for d in range(1, side.n + 1):
                for k in range(1, len(side.doors[d - 1].levels) + 1):
                    store[k, d] = m.add_var(vname(base, k, d, tag=tag), BINARY, group="first_stage")
                    m.branch_priority[store[k, d]] = 1   # the design splits the scenarios apart
                m.add_constr({store[k, d]: 1.0 for k in range(1, len(side.doors[d - 1].levels) + 1)},
                             LE, 1.0, name=vname(f"{base}_one", d, tag=tag))
            m.add_constr({j: 1.0 for j in store.values()}, LE, side.max_doors,
                         name=vname(cap_name, tag=tag))
        c1 = m.add_var(vname("C1", tag=tag), CONTINUOUS, group="first_stage")
        terms = {c1: 1.0}
        for (k, d), j in alpha.items():
            terms[j] = -inst.strip.doors[d - 1].levels[k - 1].cost
        for (k, d), j in beta.items():
            terms[j] = -inst.stack.doors[d - 1].levels[k - 1].cost
        m.add_constr(terms, EQ, 0.0, name=vname("C1_def", tag=tag))
        return alpha, beta, c1

    def second_stage(self, sd: ScenarioData, tag: str, alpha: Mapping, beta: Mapping) -> int:
        """Assignment block for one scenario; returns the cost column F."""
        m, inst = self.model, self.inst
        a0 = m.add_var(vname("a0", tag=tag), BINARY)
        b0 = m.add_var(vname("b0", tag=tag), BINARY)
        x, y = {}, {}
        for mm in sd.S:
            for i in (OUTSOURCE,) + sd.accepted_strip[mm]:
                x[mm, i] = m.add_var(vname("x", mm, i, tag=tag), BINARY)
            m.add_constr({x[mm, i]: 1.0 for i in (OUTSOURCE,) + sd.accepted_strip[mm]}, EQ, 1.0,
                         name=vname("assign_x", mm, tag=tag))
            m.add_constr({x[mm, OUTSOURCE]: 1.0, a0: -1.0}, LE, 0.0, name=vname("out_x", mm, tag=tag))
        for n in sd.R:
            for j in (OUTSOURCE,) + sd.accepted_stack[n]:
                y[n, j] = m.add_var(vname("y", n, j, tag=tag), BINARY)
            m.add_constr({y[n, j]: 1.0 for j in (OUTSOURCE,) + sd.accepted_stack[n]}, EQ, 1.0,
                         name=vname("assign_y", n, tag=tag))
            m.add_constr({y[n, OUTSOURCE]: 1.0, b0: -1.0}, LE, 0.0, name=vname("out_y", n, tag=tag))
        for d in range(1, inst.strip.n + 1):
            load = {x[mm, d]: sd.S[mm] for mm in sd.S if (mm, d) in x and sd.S[mm] > 0}
            if not load:
                continue
            net = 1.0 - sd.D_strip[d - 1]
            for k in range(1, len(inst.strip.doors[d - 1].levels) + 1):
                load[alpha[k, d]] = -net * inst.strip.doors[d - 1].levels[k - 1].capacity
            m.add_constr(load, LE, 0.0, name=vname("cap_strip", d, tag=tag))
        for d in range(1, inst.stack.n + 1):
            load = {y[n, d]: sd.R[n] for n in sd.R if (n, d) in y and sd.R[n] > 0}
            if not load:
                continue
            net = 1.0 - sd.D_stack[d - 1]
            for k in range(1, len(inst.stack.doors[d - 1].levels) + 1):
                load[beta[k, d]] = -net * inst.stack.doors[d - 1].levels[k - 1].capacity
            m.add_constr(load, LE, 0.0, name=vname("cap_stack", d, tag=tag))
        F = m.add_var(vname("F", tag=tag), CONTINUOUS)
        fdef = {F: 1.0, a0: -sd.penalty, b0: -sd.penalty}
        for (mm, n) in sorted(sd.H):
            I = (OUTSOURCE,) + sd.accepted_strip[mm]
            J = (OUTSOURCE,) + sd.accepted_stack[n]
            v = {}
            for i in I:
                for j in J:
                    v[i, j] = m.add_var(vname("v", mm, i, n, j, tag=tag), CONTINUOUS)
                    g = sd.G(mm, i, n, j)
                    if g:
                        fdef[v[i, j]] = -g
            for i in I:
                terms = {v[i, j]: 1.0 for j in J}
                terms[x[mm, i]] = -1.0
                m.add_constr(terms, EQ, 0.0, name=vname("vx", mm, i, n, tag=tag))
            for j in J:
                terms = {v[i, j]: 1.0 for i in I}
                terms[y[n, j]] = -1.0
                m.add_constr(terms, EQ, 0.0, name=vname("vy", mm, n, j, tag=tag))
        m.add_constr(fdef, EQ, 0.0, name=vname("F_def", tag=tag))
        return F


def block_tag(p: int, sid: int) -> str:
    return f"p{p}w{sid}"


# ---------------------------------------------------------------------------
# SD bounds

def default_sd_bounds(inst: CddpInstance, members: Sequence[AmbiguityMember],
                      cfg: SdConfig) -> tuple[float, float, float]:
    """(u_lo, u_hi, c_hi), filling unset fields.

    The lower bound must hold for every member's cost, not only the worst one
    (a member not carrying the robust cost still faces the lower-link row), so
    the default is the smallest LP-relaxation value of a single-scenario
    ``C1 + F`` problem over all member scenarios; any weighted average of
    scenario costs is at least that.
    """
    from .milp.simplex import OPTIMAL, SimplexSolver
    c1max = max_first_stage(inst)
    worst_block = {}
    for p, mem in enumerate(members):
        for sid in mem.scenarios:
            worst_block[p, sid] = max_second_stage(member_scenario_data(inst, mem, sid))
    u_hi = cfg.u_hi
    if u_hi is None:
        u_hi = c1max + max(sum(mem.weights[s] * worst_block[p, s] for s in mem.scenarios)
                           for p, mem in enumerate(members))
    c_hi = cfg.c_hi if cfg.c_hi is not None else c1max + max(worst_block.values())
    u_lo = cfg.u_lo
    if u_lo is None:
        u_lo = math.inf
        for p, mem in enumerate(members):
            for sid in mem.scenarios:
                b = _Builder(inst, [mem], "single")
                al, be, c1 = b.first_stage()
                F = b.second_stage(b.data(0, sid), "s", al, be)
                b.model.set_obj(c1, 1.0)
                b.model.set_obj(F, 1.0)
                res = SimplexSolver(b.model).solve()
                if res.status == OPTIMAL:
                    u_lo = min(u_lo, res.objective)
        u_lo = max(0.0, u_lo - 1e-6 * max(1.0, abs(u_lo))) if math.isfinite(u_lo) else 0.0
    return float(u_lo), float(u_hi), float(c_hi)


def _sd_block(m: MilpModel, tag: str, c1: int, F: int, gamma: int, c_hi: float,
              profiles: Sequence[SdProfile]) -> tuple[int, list[int]]:
    """Per-scenario surplus rows plus the Fortet rows linking C12p to the
    selection indicator; returns (C12p, surplus columns)."""
    c12 = m.add_var(vname("C12", tag=tag), CONTINUOUS)
    c12p = m.add_var(vname("C12p", tag=tag), CONTINUOUS)
    m.add_constr({c12: 1.0, c1: -1.0, F: -1.0}, EQ, 0.0, name=vname("C12_def", tag=tag))
    m.add_constr({c12p: 1.0, gamma: -c_hi}, LE, 0.0, name=vname("C12p_gamma", tag=tag))
    m.add_constr({c12p: 1.0, c12: -1.0}, LE, 0.0, name=vname("C12p_le", tag=tag))
    m.add_constr({c12: 1.0, c12p: -1.0, gamma: c_hi}, LE, c_hi, name=vname("C12p_ge", tag=tag))
    surplus = []
    for b, pr in enumerate(profiles):
        s = m.add_var(vname("s", b, tag=tag), CONTINUOUS, 0.0, pr.surplus_cap)
        m.add_constr({c12p: 1.0, s: -1.0}, LE, pr.threshold, name=vname("surplus", b, tag=tag))
        surplus.append(s)
    return c12p, surplus


def _u_fortet(m: MilpModel, tag: str, up: int, u: int, gamma: int, u_hi: float) -> None:
    m.add_constr({up: 1.0, gamma: -u_hi}, LE, 0.0, name=vname("up_gamma", tag=tag))
    m.add_constr({up: 1.0, u: -1.0}, LE, 0.0, name=vname("up_le", tag=tag))
    m.add_constr({u: 1.0, up: -1.0, gamma: u_hi}, LE, u_hi, name=vname("up_ge", tag=tag))


# ---------------------------------------------------------------------------
# public builders

@dataclass
class BuiltModel:
    model: MilpModel
    members: list[AmbiguityMember]
    F: dict[tuple[int, int], int]            # (member pos, scenario) -> F column
    variant: str
    sd_bounds: tuple[float, float, float] | None = None
    surplus: dict[tuple[int, int, int], int] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def scenario_costs(self, sol: MilpSolution) -> dict[tuple[int, int], float]:
        names = self.model.variables
        return {k: sol.values[names[j].name] for k, j in self.F.items()}


def build_lip_rn(inst: CddpInstance, members: Sequence[AmbiguityMember]) -> BuiltModel:
    b = _Builder(inst, members, "LIP-RN")
    m = b.model
    alpha, beta, c1 = b.first_stage()
    u = m.add_var("u", CONTINUOUS, obj=1.0)
    Fs = {}
    for p, mem in enumerate(b.members):
        row = {c1: 1.0, u: -1.0}
        for sid in mem.scenarios:
            F = b.second_stage(b.data(p, sid), block_tag(p, sid), alpha, beta)
            Fs[p, sid] = F
            row[F] = row.get(F, 0.0) + mem.weights[sid]
        m.add_constr(row, LE, 0.0, name=vname("robust", p))
    return BuiltModel(m, b.members, Fs, RN)


def build_lip_sd(inst: CddpInstance, members: Sequence[AmbiguityMember], cfg: SdConfig,
                 expected_caps: bool = True) -> BuiltModel:
    """``expected_caps=False`` omits the expected-surplus rows (used when a
    fixed design cannot meet them)."""
    cfg.validate()
    u_lo, u_hi, c_hi = default_sd_bounds(inst, members, cfg)
    if u_lo > u_hi:
        raise BuildError(f"lower bound {u_lo} exceeds upper bound {u_hi}")
    b = _Builder(inst, members, "LIP-SD")
    m = b.model
    alpha, beta, c1 = b.first_stage()
    u = m.add_var("u", CONTINUOUS, 0.0, u_hi, obj=1.0)
    Fs, surplus = {}, {}
    gammas = []
    for p, mem in enumerate(b.members):
        tag = f"p{p}"
        gamma = m.add_var(vname("gamma", tag=tag), BINARY)
        up = m.add_var(vname("up", tag=tag), CONTINUOUS, 0.0, u_hi)
        gammas.append(gamma)
        cost = {c1: 1.0}
        exp_rows = [dict() for _ in cfg.profiles]
        for sid in mem.scenarios:
            btag = block_tag(p, sid)
            F = b.second_stage(b.data(p, sid), btag, alpha, beta)
            Fs[p, sid] = F
            cost[F] = cost.get(F, 0.0) + mem.weights[sid]
            _, s_cols = _sd_block(m, btag, c1, F, gamma, c_hi, cfg.profiles)
            for k, s in enumerate(s_cols):
                surplus[p, sid, k] = s
                exp_rows[k][s] = mem.weights[sid]
        lo = {up: 1.0, gamma: -u_lo}
        for j, a in cost.items():
            lo[j] = -a
        m.add_constr(lo, LE, -u_lo, name=vname("cost_lo", p))
        hi = dict(cost)
        hi[u] = -1.0
        m.add_constr(hi, LE, 0.0, name=vname("robust", p))
        _u_fortet(m, tag, up, u, gamma, u_hi)
        for k, pr in enumerate(cfg.profiles):
            if expected_caps:
                m.add_constr(exp_rows[k], LE, pr.expected_cap, name=vname("exp_surplus", p, k))
    m.sos1.append(list(gammas))
    m.add_constr({g: 1.0 for g in gammas}, EQ, 1.0, name="select_member")
    return BuiltModel(m, b.members, Fs, SD, (u_lo, u_hi, c_hi), surplus)


def build_svc_model(variant: str, inst: CddpInstance, members: Sequence[AmbiguityMember],
                    scheme: ClusterScheme, sd_config: SdConfig | None = None) -> BuiltModel:
    """Split-variable model: one first-stage copy per cluster tied by circular
    ``<=`` rows.  Member cost rows weigh scenarios by their member weights
    (cluster weight times within-cluster weight), which keeps the model
    equivalent to the undecomposed one."""
    if {c.member for c in scheme.clusters} != set(range(len(members))):
        raise BuildError("cluster scheme does not cover the ambiguity set")
    for p, mem in enumerate(members):
        got = sorted(s for c in scheme.member_clusters(p) for s in c.scenarios)
        if got != sorted(mem.scenarios):
            raise BuildError(f"clusters of member {p} do not partition its scenarios")
    if variant == SD:
        if sd_config is None:
            raise BuildError("SD variant needs an SD configuration")
        sd_config.validate()
        u_lo, u_hi, c_hi = default_sd_bounds(inst, members, sd_config)
    b = _Builder(inst, members, f"SVC-{variant.upper()}")
    m = b.model
    copies = {}
    for c in scheme.clusters:
        tag = f"c{c.id}"
        alpha, beta, c1 = b.first_stage(tag)
        u = m.add_var(vname("u", tag=tag), CONTINUOUS, 0.0, u_hi if variant == SD else INF)
        copies[c.id] = (alpha, beta, c1, u)
    bar = scheme.clusters[0].id
    m.set_obj(copies[bar][3], 1.0)
    c1_bar, u_bar = copies[bar][2], copies[bar][3]

    Fs, surplus = {}, {}
    gammas, first_gammas = {}, []
    for p, mem in enumerate(b.members):
        cost = {c1_bar: 1.0}
        exp_rows = [dict() for _ in (sd_config.profiles if variant == SD else [])]
        for c in scheme.member_clusters(p):
            alpha, beta, c1, _ = copies[c.id]
            if variant == SD:
                gammas[c.id] = m.add_var(vname("gamma", tag=f"c{c.id}"), BINARY)
            for sid in c.scenarios:
                btag = block_tag(p, sid)
                F = b.second_stage(b.data(p, sid), btag, alpha, beta)
                Fs[p, sid] = F
                cost[F] = cost.get(F, 0.0) + mem.weights[sid]
                if variant == SD:
                    _, s_cols = _sd_block(m, btag, c1_bar, F, gammas[c.id], c_hi, sd_config.profiles)
                    for k, s in enumerate(s_cols):
                        surplus[p, sid, k] = s
                        exp_rows[k][s] = mem.weights[sid]
        hi = dict(cost)
        hi[u_bar] = hi.get(u_bar, 0.0) - 1.0
        m.add_constr(hi, LE, 0.0, name=vname("robust", p))
        if variant == SD:
            for c in scheme.member_clusters(p):
                tag = f"c{c.id}"
                up = m.add_var(vname("up", tag=tag), CONTINUOUS, 0.0, u_hi)
                lo = {up: 1.0, gammas[c.id]: -u_lo}
                for j, a in cost.items():
                    lo[j] = lo.get(j, 0.0) - a
                m.add_constr(lo, LE, -u_lo, name=vname("cost_lo", tag=tag))
                _u_fortet(m, tag, up, copies[c.id][3], gammas[c.id], u_hi)
            for k, pr in enumerate(sd_config.profiles):
                m.add_constr(exp_rows[k], LE, pr.expected_cap, name=vname("exp_surplus", p, k))
            first_gammas.append(gammas[scheme.member_clusters(p)[0].id])

    # circular split rows over all clusters (gamma: within each member)
    for c in scheme.clusters:
        nc = scheme.next(c.id)
        if nc == c.id:
            continue
        a1, b1, _, u1 = copies[c.id]
        a2, b2, _, u2 = copies[nc]
        for key in a1:
            m.add_constr({a1[key]: 1.0, a2[key]: -1.0}, LE, 0.0, name=vname("svc_alpha", *key, tag=f"c{c.id}"))
        for key in b1:
            m.add_constr({b1[key]: 1.0, b2[key]: -1.0}, LE, 0.0, name=vname("svc_beta", *key, tag=f"c{c.id}"))
        m.add_constr({u1: 1.0, u2: -1.0}, LE, 0.0, name=vname("svc_u", tag=f"c{c.id}"))
    if variant == SD:
        for c in scheme.clusters:
            nc = scheme.next_in_member(c.id)
            if nc != c.id:
                m.add_constr({gammas[c.id]: 1.0, gammas[nc]: -1.0}, LE, 0.0,
                             name=vname("svc_gamma", tag=f"c{c.id}"))
        m.sos1.append(list(first_gammas))
        m.add_constr({g: 1.0 for g in first_gammas}, EQ, 1.0, name="select_member")
        return BuiltModel(m, b.members, Fs, SD, (u_lo, u_hi, c_hi), surplus,
                          meta={"copies": copies, "gammas": gammas})
    return BuiltModel(m, b.members, Fs, RN, meta={"copies": copies})


def build_scd_submodel(variant: str, inst: CddpInstance, members: Sequence[AmbiguityMember],
                       cluster: Cluster, sd_config: SdConfig | None = None,
                       sd_bounds: tuple[float, float, float] | None = None) -> BuiltModel:
    """Cluster submodel: min u^c over the cluster's scenarios with
    within-cluster weights.  The SD variant keeps the two-sided cost row, the
    total-cost definitions, per-scenario surplus rows and their Fortet rows,
    with a free cluster indicator; selection and expected-surplus rows drop."""
    if not cluster.scenarios:
        raise BuildError(f"cluster {cluster.id} is empty")
    mem = members[cluster.member]
    b = _Builder(inst, [mem], f"SCD-{variant.upper()}-c{cluster.id}")
    m = b.model
    alpha, beta, c1 = b.first_stage()
    u = m.add_var("u", CONTINUOUS, obj=1.0)
    cost = {c1: 1.0}
    Fs = {}
    if variant == SD:
        if sd_config is None:
            raise BuildError("SD variant needs an SD configuration")
        u_lo, u_hi, c_hi = sd_bounds or default_sd_bounds(inst, members, sd_config)
        gamma = m.add_var("gamma", BINARY)
    for sid in cluster.scenarios:
        btag = block_tag(0, sid)
        F = b.second_stage(b.data(0, sid), btag, alpha, beta)
        Fs[cluster.member, sid] = F
        cost[F] = cluster.inner[sid]
        if variant == SD:
            _sd_block(m, btag, c1, F, gamma, c_hi, sd_config.profiles)
    hi = dict(cost)
    hi[u] = -1.0
    m.add_constr(hi, LE, 0.0, name="robust")
    if variant == SD:
        m.add_constr(cost, GE, u_lo, name="cost_lo")
    return BuiltModel(m, [mem], Fs, variant, meta={"cluster": cluster.id})


def fix_first_stage(model: MilpModel, inst: CddpInstance, design: FirstStageDesign,
                    tag: str | None = None) -> MilpModel:
    design.validate(inst)
    out = model.copy()
    for side, base, levels in ((inst.strip, "alpha", design.strip), (inst.stack, "beta", design.stack)):
        for d in range(1, side.n + 1):
            for k in range(1, len(side.doors[d - 1].levels) + 1):
                v = 1.0 if levels[d - 1] == k else 0.0
                out.set_bounds(out.var(vname(base, k, d, tag=tag)), v, v)
    return out


def build_cdap(inst: CddpInstance, member: AmbiguityMember, sid: int,
               design: FirstStageDesign) -> tuple[MilpModel, int]:
    """Second-stage assignment for one scenario under a fixed design: min F."""
    design.validate(inst)
    b = _Builder(inst, [member], f"CDAP-{member.name}-{sid}")
    alpha, beta, _ = b.first_stage()
    F = b.second_stage(b.data(0, sid), "s", alpha, beta)
    m = fix_first_stage(b.model, inst, design)
    m.set_obj(F, 1.0)
    return m, F
