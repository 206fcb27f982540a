"""Ambiguity-set construction.

Candidates are built by projecting each nominal realization onto a fitted
distribution family's CDF, shifting the CDF value by one Gaussian draw per
scenario, and mapping back through the inverse CDF.  Each candidate is then
weighted by its scenario likelihoods and scored by a Wasserstein-type
transport distance to the nominal distribution; the ambiguity set keeps the
closest candidates within a radius.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import special, stats

from .instance import Cell, CddpInstance, NominalDistribution
from .milp.model import EQ, MilpModel
from .milp.simplex import OPTIMAL, SimplexSolver
from .rng import substream

log = logging.getLogger(__name__)

FAMILIES = ("Normal", "Weibull", "Gamma", "Lognormal")
POSITIVE_SUPPORT = {"Weibull", "Gamma", "Lognormal"}
CDF_CAP = 1.0 - 1e-9
FORMAT_VERSION = 1


class AmbiguityError(ValueError):
    pass


class ProjectionError(AmbiguityError):
    pass


class MemberRejected(AmbiguityError):
    pass


# ---------------------------------------------------------------------------
# moments and family fitting

def weighted_moments(values: Sequence[float], weights: Sequence[float]) -> tuple[float, float]:
    """Mean and variance with weights renormalized to sum to one."""
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mu = float(w @ x)
    return mu, float(w @ (x - mu) ** 2)


def nominal_realizations(instance: CddpInstance) -> dict[int, dict[Cell, float]]:
    """xi-hat per scenario, restricted to its group's parameter set."""
    nd = instance.nominal
    out = {}
    for sid in nd.scenario_ids:
        H = instance.scenario(sid).H
        out[sid] = {h: float(H.get(h, 0.0)) for h in nd.group_parameters[nd.group_of[sid]]}
    return out


@dataclass
class Moments:
    mean: dict[Cell, float]
    var: dict[Cell, float]

    def degenerate(self, h: Cell) -> bool:
        return self.var[h] <= 0.0


def fit_moments(nd: NominalDistribution, xi_hat: Mapping[int, Mapping[Cell, float]]) -> Moments:
    """One moment pair per parameter over every scenario whose group holds it."""
    mean, var = {}, {}
    for h in nd.parameters:
        sids = [s for s in nd.scenario_ids if h in xi_hat[s]]
        if not sids:
            raise AmbiguityError(f"parameter {h} has no realization")
        mu, v = weighted_moments([xi_hat[s][h] for s in sids], [nd.weights[s] for s in sids])
        mean[h], var[h] = mu, v
    return Moments(mean, var)


def _weibull_shape(cv: float, tol: float = 1e-10) -> float:
    """Shape k with Gamma(1+2/k)/Gamma(1+1/k)^2 - 1 = cv^2 (monotone decreasing in k)."""
    target = math.log1p(cv * cv)

    def g(logk):
        k = math.exp(logk)
        return special.gammaln(1 + 2 / k) - 2 * special.gammaln(1 + 1 / k) - target

    lo, hi = math.log(1e-2), math.log(1e5)
    if g(lo) < 0 or g(hi) > 0:
        raise AmbiguityError(f"coefficient of variation {cv} outside the Weibull fitting range")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


def fit_family(family: str, mean: float, var: float):
    """Frozen scipy distribution with the given mean and variance."""
    if var <= 0:
        raise AmbiguityError("cannot fit a family to a degenerate parameter")
    sd = math.sqrt(var)
    if family == "Normal":
        return stats.norm(loc=mean, scale=sd)
    if mean <= 0:
        raise AmbiguityError(f"{family} needs a positive mean, got {mean}")
    if family == "Gamma":
        return stats.gamma(a=mean * mean / var, scale=var / mean)
    if family == "Lognormal":
        s2 = math.log1p(var / (mean * mean))
        return stats.lognorm(s=math.sqrt(s2), scale=math.exp(math.log(mean) - s2 / 2))
    if family == "Weibull":
        k = _weibull_shape(sd / mean)
        return stats.weibull_min(c=k, scale=mean / math.exp(special.gammaln(1 + 1 / k)))
    raise AmbiguityError(f"unknown family {family!r}")


class FamilyCache:
    def __init__(self, moments: Moments):
        self.moments = moments
        self._d: dict = {}

    def get(self, family: str, h: Cell):
        key = (family, h)
        if key not in self._d:
            self._d[key] = fit_family(family, self.moments.mean[h], self.moments.var[h])
        return self._d[key]


def project_cdf(x: float, dist, family: str, label: str = "") -> float:
    if family in POSITIVE_SUPPORT and x <= 0:
        raise ProjectionError(f"{family} projection of non-positive realization {x} at {label}")
    return float(dist.cdf(x))


# ---------------------------------------------------------------------------
# members

@dataclass
class PerturbationConfig:
    sigma_eps: float = 0.05
    candidates_per_family: int = 20
    rho: float = 2
    theta: float = math.inf
    max_members: int = 10**9
    seed: int = 0
    families: tuple[str, ...] = FAMILIES
    cdf_cap: float = CDF_CAP

    def __post_init__(self):
        if not self.sigma_eps > 0:
            raise AmbiguityError("sigma_eps must be positive")
        if self.max_members < 1:
            raise AmbiguityError("max_members must be at least 1")
        if self.rho not in (1, 2, math.inf):
            raise AmbiguityError(f"rho must be 1, 2 or inf, got {self.rho}")


@dataclass
class AmbiguityMember:
    id: int
    family: str
    index: int
    scenarios: tuple[int, ...]
    xi: dict[int, dict[Cell, float]]
    weights: dict[int, float] = field(default_factory=dict)
    log_likelihood: dict[int, float] = field(default_factory=dict)
    proximity: float = math.nan

    @property
    def name(self) -> str:
        return f"{self.family}:{self.index}"

    def volumes(self, sid: int) -> dict[Cell, float]:
        return self.xi[sid]


def perturb_and_invert(xi_hat: Mapping[int, Mapping[Cell, float]], family: str,
                       cache: FamilyCache, eps: Mapping[int, float], cap: float = CDF_CAP,
                       group_of: Mapping[int, int] | None = None) -> tuple[dict, list[str]]:
    """Perturbed realizations for the surviving scenarios plus drop notes.

    A scenario is dropped when any shifted CDF value is non-positive, and also
    when the inverse CDF returns a non-positive volume (possible under Normal).
    """
    out: dict[int, dict[Cell, float]] = {}
    notes = []
    mom = cache.moments
    for sid, cells in xi_hat.items():
        e = float(eps[sid])
        real: dict[Cell, float] = {}
        dropped = False
        for h, x in cells.items():
            if mom.degenerate(h):
                real[h] = x
                continue
            dist = cache.get(family, h)
            u = project_cdf(x, dist, family, label=f"h={h}, scenario={sid}") + e
            if u <= 0.0:
                notes.append(f"scenario {sid}: shifted cdf {u:.3g} at {h}")
                dropped = True
                break
            v = float(dist.ppf(min(u, cap))) if e != 0.0 else x
            if not v > 0.0:
                notes.append(f"scenario {sid}: non-positive volume {v:.3g} at {h}")
                dropped = True
                break
            real[h] = v
        if not dropped:
            out[sid] = real
    return out, notes


def normalize_weights(log_lik: Mapping[int, float], group_of: Mapping[int, int],
                      group_weights: Mapping[int, float]) -> dict[int, float]:
    """Group weight times likelihood share within the group, in the log domain."""
    by_group: dict[int, list[int]] = {}
    for sid in log_lik:
        by_group.setdefault(group_of[sid], []).append(sid)
    w = {}
    for g, sids in by_group.items():
        ll = np.array([log_lik[s] for s in sids], dtype=float)
        top = ll.max()
        if not np.isfinite(top):
            raise MemberRejected(f"all likelihoods vanish in group {g}")
        share = np.exp(ll - top)
        share /= share.sum()
        for s, v in zip(sids, share):
            w[s] = float(group_weights[g]) * float(v)
    return w


def compute_weights(member: AmbiguityMember, nd: NominalDistribution, cache: FamilyCache) -> None:
    ll = {}
    for sid in member.scenarios:
        total = 0.0
        for h, x in member.xi[sid].items():
            if cache.moments.degenerate(h):
                continue
            total += float(cache.get(member.family, h).logpdf(x))
        ll[sid] = total
    member.log_likelihood = ll
    member.weights = normalize_weights(ll, nd.group_of, nd.group_weights)


# ---------------------------------------------------------------------------
# proximity

def scenario_distance(a: Mapping[Cell, float], b: Mapping[Cell, float], rho: float) -> float:
    """Power-sum distance over the shared parameters; +inf when none are shared."""
    shared = a.keys() & b.keys()
    if not shared:
        return math.inf
    diff = np.array([abs(a[h] - b[h]) for h in sorted(shared)])
    if rho == math.inf:
        return float(diff.max())
    return float(np.sum(diff ** rho))


def transport_value(supply: Sequence[float], demand: Sequence[float], dist: np.ndarray) -> float:
    """Optimal value of the balanced transportation problem (inf lanes omitted)."""
    supply = np.asarray(supply, float)
    demand = np.asarray(demand, float)
    if abs(supply.sum() - demand.sum()) > 1e-9:
        raise AmbiguityError(f"transport imbalance: supply {supply.sum()!r} vs demand {demand.sum()!r}")
    model = MilpModel("transport")
    cols = {}
    for a in range(len(supply)):
        for b in range(len(demand)):
            if np.isfinite(dist[a, b]):
                cols[a, b] = model.add_var(f"eta[{a},{b}]", obj=float(dist[a, b]))
    for a in range(len(supply)):
        model.add_constr({cols[a, b]: 1.0 for b in range(len(demand)) if (a, b) in cols}, EQ, supply[a])
    for b in range(len(demand)):
        model.add_constr({cols[a, b]: 1.0 for a in range(len(supply)) if (a, b) in cols}, EQ, demand[b])
    res = SimplexSolver(model).solve()
    if res.status != OPTIMAL:
        return math.inf
    return max(res.objective, 0.0)


def wasserstein_proximity(member: AmbiguityMember, nd: NominalDistribution,
                          xi_hat: Mapping[int, Mapping[Cell, float]], rho: float) -> float:
    rows = list(member.scenarios)
    cols = list(nd.scenario_ids)
    D = np.array([[scenario_distance(member.xi[a], xi_hat[b], rho) for b in cols] for a in rows])
    return transport_value([member.weights[a] for a in rows], [nd.weights[b] for b in cols], D)


# ---------------------------------------------------------------------------
# candidate generation and selection

@dataclass
class Candidates:
    members: list[AmbiguityMember]
    rejected: list[tuple[str, str]]
    config: PerturbationConfig
    moments: Moments


def build_member(instance: CddpInstance, cfg: PerturbationConfig, cache: FamilyCache,
                 xi_hat, family: str, index: int) -> AmbiguityMember:
    nd = instance.nominal
    fam_id = FAMILIES.index(family)
    eps = {sid: float(substream(cfg.seed, "eps", family, index, sid).normal(0.0, cfg.sigma_eps))
           for sid in nd.scenario_ids}
    xi, notes = perturb_and_invert(xi_hat, family, cache, eps, cfg.cdf_cap)
    if not xi:
        raise MemberRejected("every scenario dropped: " + "; ".join(notes[:3]))
    for g, sids in _group_lists(nd).items():
        if not any(s in xi for s in sids):
            raise MemberRejected(f"scenario group {g} emptied: " + "; ".join(notes[:3]))
    member = AmbiguityMember(fam_id * cfg.candidates_per_family + index, family, index,
                             tuple(s for s in nd.scenario_ids if s in xi), xi)
    compute_weights(member, nd, cache)
    member.proximity = wasserstein_proximity(member, nd, xi_hat, cfg.rho)
    return member


def _group_lists(nd: NominalDistribution) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for sid in nd.scenario_ids:
        out.setdefault(nd.group_of[sid], []).append(sid)
    return out


def generate_candidates(instance: CddpInstance, cfg: PerturbationConfig,
                        workers: int = 1) -> Candidates:
    nd = instance.nominal
    xi_hat = nominal_realizations(instance)
    moments = fit_moments(nd, xi_hat)
    cache = FamilyCache(moments)
    jobs = [(f, k) for f in cfg.families for k in range(cfg.candidates_per_family)]
    # warm the per-family fits so worker threads only read the cache
    for f in cfg.families:
        for h in nd.parameters:
            if not moments.degenerate(h):
                cache.get(f, h)

    def run(job):
        f, k = job
        try:
            return build_member(instance, cfg, cache, xi_hat, f, k)
        except MemberRejected as exc:
            return (f"{f}:{k}", str(exc))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    members = [r for r in results if isinstance(r, AmbiguityMember)]
    rejected = [r for r in results if not isinstance(r, AmbiguityMember)]
    for name, why in rejected:
        log.warning("candidate %s rejected: %s", name, why)
    return Candidates(members, rejected, cfg, moments)


def select_ambiguity(candidates: Sequence[AmbiguityMember], theta: float,
                     max_members: int) -> list[AmbiguityMember]:
    chosen = [c for c in candidates if c.proximity <= theta]
    chosen.sort(key=lambda c: (c.proximity, c.id))
    if not chosen:
        log.warning("no candidate within radius %s", theta)
    return chosen[:max_members]


def centile_radius(candidates: Sequence[AmbiguityMember], fraction: float) -> float:
    """Proximity quantile (linear interpolation) used as a selection radius."""
    return float(np.quantile([c.proximity for c in candidates], fraction))


STAT_COLUMNS = ("Min", "1st 5cent", "1st 10cent", "1st Qu", "Median", "Mean", "3rd Qu", "Max")


def proximity_statistics(values: Sequence[float]) -> dict[str, float]:
    v = np.asarray(values, dtype=float)
    q = np.quantile(v, [0.0, 0.05, 0.10, 0.25, 0.5])
    return dict(zip(STAT_COLUMNS, [float(q[0]), float(q[1]), float(q[2]), float(q[3]),
                                   float(q[4]), float(v.mean()),
                                   float(np.quantile(v, 0.75)), float(v.max())]))


def write_statistics_csv(candidates: Sequence[AmbiguityMember], path: str | Path,
                         by_family: bool = True) -> None:
    """Overall row plus one row per family (the per-distribution layout)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("Distribution",) + STAT_COLUMNS)
        rows = [("All", [c.proximity for c in candidates])]
        if by_family:
            for f in FAMILIES:
                vals = [c.proximity for c in candidates if c.family == f]
                if vals:
                    rows.append((f, vals))
        for label, vals in rows:
            st = proximity_statistics(vals)
            wr.writerow([label] + [f"{st[k]:.6g}" for k in STAT_COLUMNS])


# ---------------------------------------------------------------------------
# ambiguity-set file

@dataclass
class AmbiguitySet:
    members: list[AmbiguityMember]
    rho: float
    theta: float
    meta: dict = field(default_factory=dict)


def _num(x: float):
    return x if math.isfinite(x) else str(x)


def ambiguity_to_dict(aset: AmbiguitySet) -> dict:
    return {
        "version": FORMAT_VERSION,
        "rho": _num(aset.rho),
        "theta": _num(aset.theta),
        "meta": aset.meta,
        "members": [{
            "id": m.id, "family": m.family, "index": m.index,
            "scenarios": list(m.scenarios),
            "xi": [[sid, h[0], h[1], v] for sid in m.scenarios for h, v in sorted(m.xi[sid].items())],
            "weights": [[sid, m.weights[sid]] for sid in m.scenarios],
            "proximity": _num(m.proximity),
        } for m in aset.members],
    }


def write_ambiguity(aset: AmbiguitySet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(ambiguity_to_dict(aset), indent=1) + "\n")


def read_ambiguity(path: str | Path) -> AmbiguitySet:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise AmbiguityError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    for key in ("version", "members", "rho"):
        if key not in data:
            raise AmbiguityError(f"{path}: missing field {key!r}")
    members = []
    for k, m in enumerate(data["members"]):
        for key in ("id", "family", "scenarios", "xi", "weights"):
            if key not in m:
                raise AmbiguityError(f"{path}: members[{k}] missing field {key!r}")
        xi: dict[int, dict[Cell, float]] = {int(s): {} for s in m["scenarios"]}
        for sid, a, b, v in m["xi"]:
            xi[int(sid)][(int(a), int(b))] = float(v)
        members.append(AmbiguityMember(int(m["id"]), m["family"], int(m.get("index", 0)),
                                       tuple(int(s) for s in m["scenarios"]), xi,
                                       {int(s): float(w) for s, w in m["weights"]},
                                       proximity=float(m.get("proximity", math.nan))))
    return AmbiguitySet(members, float(data["rho"]), float(data.get("theta", math.inf)),
                        dict(data.get("meta", {})))
