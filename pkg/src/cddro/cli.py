"""Command-line front end: gen, ambiguity, solve, bounds, report.

Exit codes: 0 success, 2 validation error, 3 solver limit reached,
4 model infeasible.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ambiguity import (FAMILIES, AmbiguityError, AmbiguitySet, PerturbationConfig,
                        centile_radius, generate_candidates, read_ambiguity, select_ambiguity,
                        write_ambiguity, write_statistics_csv)
from .bounds import SolveLimits, run_bounds, summary_csv
from .dro_models import (RN, SD, BuildError, FirstStageDesign, SdConfig, block_tag,
                         build_lip_rn, build_lip_sd)
from .instance import InstanceError, generate_instance, read_instance, write_instance
from .milp import MilpSolution, ModelError, export_lp_file, vname
from .oracle import OracleRefused, enumerate_rn, enumerate_sd

log = logging.getLogger("cddro")

EXIT_OK, EXIT_VALIDATION, EXIT_LIMIT, EXIT_INFEASIBLE = 0, 2, 3, 4

# defaults sized so an I1-shaped run with |P| = 4 stays within a few minutes
DEFAULT_SUB_LIMITS = SolveLimits(time_limit=3600.0, node_limit=1000)
DEFAULT_EVAL_LIMITS = SolveLimits(time_limit=3600.0, node_limit=300)
DEFAULT_SOLVE_LIMITS = SolveLimits(time_limit=3600.0, node_limit=1_000_000)

VALIDATION_ERRORS = (InstanceError, AmbiguityError, BuildError, ModelError, OracleRefused,
                     ValueError, KeyError, json.JSONDecodeError, FileNotFoundError)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _dump(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=False, default=_jsonable) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not serializable: {type(x).__name__}")


def _finite(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _load_json_arg(text: str) -> dict:
    """Inline JSON or a path to a JSON file."""
    p = Path(text)
    if p.exists():
        return json.loads(p.read_text())
    return json.loads(text)


def _limits(d: dict | None, default: SolveLimits) -> SolveLimits:
    if not d:
        return SolveLimits(default.time_limit, default.node_limit, default.gap_limit)
    unknown = set(d) - {"time_limit", "node_limit", "gap_limit"}
    if unknown:
        raise CliError(f"unknown limit keys {sorted(unknown)}")
    return SolveLimits(float(d.get("time_limit", default.time_limit)),
                       int(d.get("node_limit", default.node_limit)),
                       float(d.get("gap_limit", default.gap_limit)))


def _sd_config(args) -> SdConfig | None:
    if args.model != SD:
        return None
    if not args.sd_config:
        raise CliError("--model sd needs --sd-config")
    cfg = SdConfig.from_dict(_load_json_arg(args.sd_config))
    cfg.validate()
    if not cfg.profiles:
        raise CliError("SD configuration has no profile")
    return cfg


def _members(args):
    aset = read_ambiguity(args.ambiguity)
    if not aset.members:
        raise CliError("ambiguity set is empty")
    return aset


# ---------------------------------------------------------------------------
# gen

def cmd_gen(args) -> int:
    inst = generate_instance(args.seed, args.shape)
    inst.meta = {"generator": {"seed": args.seed, "shape": args.shape, "version": __version__}}
    write_instance(inst, args.out)
    log.info("wrote %s (%d scenarios)", args.out, len(inst.scenarios))
    return EXIT_OK


# ---------------------------------------------------------------------------
# ambiguity

def cmd_ambiguity(args) -> int:
    inst = read_instance(args.instance)
    families = tuple(args.families.split(",")) if args.families else FAMILIES
    for f in families:
        if f not in FAMILIES:
            raise CliError(f"unknown family {f!r}; choose from {', '.join(FAMILIES)}")
    rho = math.inf if args.rho in ("inf", "infinity") else float(args.rho)
    cfg = PerturbationConfig(sigma_eps=args.sigma_eps, candidates_per_family=args.per_family,
                             rho=rho, seed=args.seed, families=families)
    cands = generate_candidates(inst, cfg, workers=args.threads)
    if args.centile is not None:
        if not cands.members:
            raise CliError("no candidate survived; cannot take a centile", EXIT_INFEASIBLE)
        theta = centile_radius(cands.members, args.centile / 100.0)
    else:
        theta = args.theta
    chosen = select_ambiguity(cands.members, theta, args.max_members)
    if not chosen:
        log.warning("ambiguity set is empty for theta=%s", theta)
    meta = {"config": {"instance": str(args.instance), "families": list(families),
                       "per_family": args.per_family, "sigma_eps": args.sigma_eps,
                       "rho": _finite(rho), "theta": _finite(args.theta), "centile": args.centile,
                       "max_members": args.max_members, "seed": args.seed},
            "candidates": len(cands.members),
            "rejected": [list(r) for r in cands.rejected],
            "proximities": [[c.name, c.proximity] for c in cands.members]}
    write_ambiguity(AmbiguitySet(chosen, rho, theta, meta), args.out)
    stats = args.stats or str(Path(args.out).with_suffix(".stats.csv"))
    if cands.members:
        write_statistics_csv(cands.members, stats)
    log.info("%d candidates scored, %d selected (theta=%g)", len(cands.members), len(chosen), theta)
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve

def cost_table(inst, members, c1: float, costs: dict, values: dict | None = None) -> list[dict]:
    """Per-(member, scenario) rows: weight, F, C1 + F and the outsourcing flags."""
    rows = []
    for p, mem in enumerate(members):
        for sid in mem.scenarios:
            f = costs[p, sid]
            row = {"member": p, "name": mem.name, "scenario": sid, "weight": mem.weights[sid],
                   "F": f, "total": c1 + f}
            if values is not None:
                tag = block_tag(p, sid)
                row["outsource_strip"] = values.get(vname("a0", tag=tag), 0.0) > 0.5
                row["outsource_stack"] = values.get(vname("b0", tag=tag), 0.0) > 0.5
            rows.append(row)
    return rows


def _print_table(dims: dict | None, rows: list[dict]) -> None:
    if dims:
        print("m,n01,nc,nz")
        print(f"{dims['m']},{dims['n01']},{dims['nc']},{dims['nz']}")
    if rows:
        print("member,scenario,weight,F,total")
        for r in rows:
            print(f"{r['name']},{r['scenario']},{r['weight']:.6f},{r['F']:.4f},{r['total']:.4f}")


def cmd_solve(args) -> int:
    inst = read_instance(args.instance)
    aset = _members(args)
    members = aset.members
    sd_cfg = _sd_config(args)
    limits = _limits(_load_json_arg(args.limits) if args.limits else None, DEFAULT_SOLVE_LIMITS)
    config = {"command": "solve", "instance": str(args.instance), "ambiguity": str(args.ambiguity),
              "model": args.model, "method": args.method, "limits": vars(limits),
              "sd_config": sd_cfg.to_dict() if sd_cfg else None}
    if args.method == "oracle":
        if args.export_lp:
            raise CliError("--export-lp needs --method exact")
        res = enumerate_rn(inst, members) if args.model == RN else enumerate_sd(inst, members, sd_cfg)
        out = {"config": config, "status": res.status, "objective": res.value,
               "design": res.design.to_dict() if res.design else None,
               "designs_enumerated": res.designs_enumerated,
               "assignments_enumerated": res.assignments_enumerated}
        rows = []
        if res.design is not None:
            c1 = res.design.cost(inst)
            out["C1"] = c1
            rows = cost_table(inst, members, c1, res.costs)
        out["scenario_costs"] = rows
        _dump(out, args.out)
        if not args.quiet:
            _print_table(None, rows)
        return EXIT_OK if res.status == "optimal" else EXIT_INFEASIBLE

    bm = build_lip_rn(inst, members) if args.model == RN else build_lip_sd(inst, members, sd_cfg)
    dims = bm.model.stats().as_row()
    if args.export_lp:
        export_lp_file(bm.model, args.export_lp, sos=not args.no_sos)
        _dump({"config": config, "dimensions": dims, "lp_file": args.export_lp}, args.out)
        if not args.quiet:
            _print_table(dims, [])
        return EXIT_OK
    if args.stats_only:
        _dump({"config": config, "dimensions": dims}, args.out)
        if not args.quiet:
            _print_table(dims, [])
        return EXIT_OK
    sol = limits.run(bm.model)
    out = {"config": config, "dimensions": dims, "solution": sol.to_dict()}
    out["solution"]["limit_reason"] = getattr(sol, "limit_reason", None)
    rows = []
    if sol.has_solution:
        design = FirstStageDesign.from_values(inst, sol.values)
        c1 = design.cost(inst)
        out["design"] = design.to_dict()
        out["C1"] = c1
        rows = cost_table(inst, members, c1, bm.scenario_costs(sol), sol.values)
        if args.model == SD:
            out["selected_member"] = next(
                (p for p in range(len(members))
                 if sol.values.get(vname("gamma", tag=f"p{p}"), 0.0) > 0.5), None)
    out["scenario_costs"] = rows
    if args.timings:
        out["timings"] = {"solve": getattr(sol, "wall_time", None)}
    _dump(out, args.out)
    if not args.quiet:
        _print_table(dims, rows)
    if sol.status == MilpSolution.INFEASIBLE:
        return EXIT_INFEASIBLE
    if sol.status != MilpSolution.OPTIMAL:
        return EXIT_LIMIT
    return EXIT_OK


# ---------------------------------------------------------------------------
# bounds

def cmd_bounds(args) -> int:
    inst = read_instance(args.instance)
    aset = _members(args)
    sd_cfg = _sd_config(args)
    lim = _load_json_arg(args.limits) if args.limits else {}
    unknown = set(lim) - {"sub", "eval", "lp_time_limit"}
    if unknown:
        raise CliError(f"unknown limit groups {sorted(unknown)}; use sub, eval, lp_time_limit")
    sub = _limits(lim.get("sub"), DEFAULT_SUB_LIMITS)
    evl = _limits(lim.get("eval"), DEFAULT_EVAL_LIMITS)
    if args.clusters_per_member < 1:
        raise CliError("--clusters-per-member must be at least 1")
    rep = run_bounds(args.model, inst, aset.members, args.clusters_per_member, sd_cfg,
                     sub, evl, args.ld_iterations, args.reference, args.threads,
                     lim.get("lp_time_limit"), timings=args.timings)
    out = rep.to_dict()
    out["config"] = dict(out["config"], command="bounds", instance=str(args.instance),
                         ambiguity=str(args.ambiguity))
    if not args.timings:
        out.pop("timings", None)
    _dump(out, args.out)
    csv_path = args.csv or (str(Path(args.out).with_suffix(".csv")) if args.out else None)
    row = rep.summary_row()
    if not args.timings:
        row = {k: (None if k.startswith("t_") else v) for k, v in row.items()}
    text = summary_csv(row)
    if csv_path:
        Path(csv_path).write_text(text)
    if not args.quiet:
        sys.stdout.write(text)
    if rep.z_ub is None:
        return EXIT_INFEASIBLE if all(c.status == MilpSolution.INFEASIBLE
                                      for c in rep.lower.clusters) else EXIT_LIMIT
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

REPORT_COLUMNS = ["source", "model", "member", "name", "n", "min", "q1", "median", "q3", "max"]


def five_numbers(values) -> tuple[float, float, float, float, float]:
    v = np.asarray(values, dtype=float)
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    return tuple(float(x) for x in q)


def report_rows(path: str, data: dict) -> list[dict]:
    rows = data.get("scenario_costs")
    if rows is None:
        raise CliError(f"{path}: no scenario_costs; expected a solve output")
    model = data.get("config", {}).get("model", "")
    by_member: dict[int, list] = {}
    names = {}
    for r in rows:
        by_member.setdefault(int(r["member"]), []).append(float(r["total"]))
        names[int(r["member"])] = r.get("name", "")
    out = []
    for p in sorted(by_member):
        mn, q1, md, q3, mx = five_numbers(by_member[p])
        out.append({"source": path, "model": model, "member": p, "name": names[p],
                    "n": len(by_member[p]), "min": mn, "q1": q1, "median": md, "q3": q3, "max": mx})
    return out


def cmd_report(args) -> int:
    if not args.inputs:
        raise CliError("report needs at least one input")
    rows = []
    for path in args.inputs:
        rows.extend(report_rows(path, json.loads(Path(path).read_text())))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cddro", description="Two-stage DRO cross-dock door design")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic instance")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--shape", required=True, help='I1, I3, I7 or "n_sc,nM,nN,nI,nJ,nH;..."')
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("ambiguity", help="score perturbed candidates and select the ambiguity set")
    a.add_argument("--instance", required=True)
    a.add_argument("--families", help="comma list, default all four")
    a.add_argument("--per-family", type=int, default=20)
    a.add_argument("--sigma-eps", type=float, default=0.05)
    a.add_argument("--rho", default="2", help="1, 2 or inf")
    sel = a.add_mutually_exclusive_group()
    sel.add_argument("--theta", type=float, default=math.inf)
    sel.add_argument("--centile", type=float, help="radius at this percentile of the proximities")
    a.add_argument("--max-members", type=int, default=10**9)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--threads", type=int, default=1)
    a.add_argument("--stats", help="proximity statistics CSV (default: next to --out)")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ambiguity)

    s = sub.add_parser("solve", help="solve the full model exactly or by enumeration")
    s.add_argument("--instance", required=True)
    s.add_argument("--ambiguity", required=True)
    s.add_argument("--model", choices=[RN, SD], default=RN)
    s.add_argument("--method", choices=["exact", "oracle"], default="exact")
    s.add_argument("--sd-config", help="JSON text or file with profiles and optional u_lo/u_hi/c_hi")
    s.add_argument("--limits", help='JSON, e.g. {"node_limit": 1000, "time_limit": 60}')
    s.add_argument("--export-lp", help="write the model to this LP file instead of solving")
    s.add_argument("--no-sos", action="store_true", help="omit the SOS section from --export-lp")
    s.add_argument("--stats-only", action="store_true", help="emit the dimensions row only")
    s.add_argument("--timings", action="store_true")
    s.add_argument("--quiet", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bounds", help="cluster lower bound, min-max upper bound, optional LD")
    b.add_argument("--instance", required=True)
    b.add_argument("--ambiguity", required=True)
    b.add_argument("--model", choices=[RN, SD], default=RN)
    b.add_argument("--sd-config")
    b.add_argument("--clusters-per-member", type=int, default=2)
    b.add_argument("--ld-iterations", type=int, default=0)
    b.add_argument("--limits", help='JSON with "sub" and "eval" limit objects and "lp_time_limit"')
    b.add_argument("--reference", type=float, help="incumbent value for the goodness ratio")
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--timings", action="store_true")
    b.add_argument("--csv", help="one-row summary CSV (default: --out with .csv)")
    b.add_argument("--quiet", action="store_true")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bounds)

    r = sub.add_parser("report", help="five-number summaries of scenario costs per member")
    r.add_argument("--inputs", nargs="*", default=[])
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
