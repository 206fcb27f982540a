import itertools

import numpy as np
import pytest

from cddro.milp import (BINARY, CONTINUOUS, EQ, GE, LE, MilpModel, MilpSolution, ModelError,
                        SolutionFileError, export_lp_file, import_solution_file, sanitize,
                        solve_lp, solve_milp, unsanitize)
from cddro.milp.bnb import DualityAuditError, audit
from cddro.milp.simplex import OPTIMAL, LpResult, SimplexSolver


def test_single_bound_lp():
    m = MilpModel()
    x = m.add_var("x", ub=10.0, obj=1.0)
    m.add_constr({x: 1.0}, GE, 1.0)
    assert solve_lp(m).objective == pytest.approx(1.0)


def test_simplex_vertex_lp():
    m = MilpModel()
    x = m.add_var("x", obj=-1.0)
    y = m.add_var("y", obj=-1.0)
    m.add_constr({x: 1.0, y: 1.0}, LE, 1.0)
    assert solve_lp(m).objective == pytest.approx(-1.0)


def test_infeasible_and_unbounded_are_statuses():
    m = MilpModel()
    x = m.add_var("x", ub=1.0)
    m.add_constr({x: 1.0}, GE, 2.0)
    assert solve_lp(m).status == MilpSolution.INFEASIBLE
    m = MilpModel()
    m.add_var("x", obj=-1.0)
    assert solve_lp(m).status == MilpSolution.UNBOUNDED


def box_lp(seed):
    rng = np.random.default_rng(seed)
    A = rng.integers(-5, 6, size=(4, 3)).astype(float)
    b = rng.integers(-2, 12, size=4).astype(float)
    c = rng.integers(-6, 7, size=3).astype(float)
    ub = rng.integers(1, 6, size=3).astype(float)
    return A, b, c, ub


def vertex_min(A, b, c, ub):
    """Minimum over all basic solutions of A x <= b, 0 <= x <= ub."""
    G = np.vstack([A, -np.eye(3), np.eye(3)])
    h = np.concatenate([b, np.zeros(3), ub])
    best = None
    for rows in itertools.combinations(range(len(G)), 3):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            v = float(c @ x)
            best = v if best is None else min(best, v)
    return best


@pytest.mark.parametrize("seed", range(40))
def test_dense_lp_matches_vertex_enumeration(seed):
    A, b, c, ub = box_lp(seed)
    m = MilpModel()
    for j in range(3):
        m.add_var(f"x{j}", ub=ub[j], obj=c[j])
    for i in range(4):
        m.add_constr(dict(enumerate(A[i])), LE, b[i])
    sol = solve_lp(m)
    want = vertex_min(A, b, c, ub)
    if want is None:
        assert sol.status == MilpSolution.INFEASIBLE
    else:
        assert sol.status == MilpSolution.OPTIMAL
        assert sol.objective == pytest.approx(want, abs=1e-7)
        assert sol.dual_objective == pytest.approx(sol.objective, rel=1e-6, abs=1e-6)


def test_lp_with_equalities_and_free_column():
    m = MilpModel()
    x = m.add_var("x", lb=-np.inf, obj=1.0)
    y = m.add_var("y", ub=4.0, obj=2.0)
    m.add_constr({x: 1.0, y: 1.0}, EQ, 3.0)
    m.add_constr({x: 1.0}, GE, -1.0)
    # cheapest is x as large as the equality allows with y at 0
    sol = solve_lp(m)
    assert sol.objective == pytest.approx(3.0)
    assert sol["x"] == pytest.approx(3.0) and sol["y"] == pytest.approx(0.0)


def test_duality_audit_rejects_mismatch():
    audit(LpResult(OPTIMAL, 10.0, None, None, 0, dual_objective=10.0 + 1e-9))
    with pytest.raises(DualityAuditError):
        audit(LpResult(OPTIMAL, 10.0, None, None, 0, dual_objective=10.1))


def test_warm_start_after_bound_change_agrees_with_cold():
    A, b, c, ub = box_lp(7)
    m = MilpModel()
    for j in range(3):
        m.add_var(f"x{j}", ub=ub[j], obj=c[j])
    for i in range(4):
        m.add_constr(dict(enumerate(A[i])), LE, b[i])
    s = SimplexSolver(m)
    first = s.solve()
    lb, hi = s.fm.lb.copy(), s.fm.ub.copy()
    hi[0] = 0.0
    warm = s.solve(lb, hi, basis=first.basis)
    cold = s.solve(lb, hi)
    assert warm.status == cold.status
    if cold.status == OPTIMAL:
        assert warm.objective == pytest.approx(cold.objective, abs=1e-9)


def test_single_feasible_point():
    m = MilpModel()
    a = m.add_var("a", BINARY, obj=3.0)
    b = m.add_var("b", BINARY, obj=-1.0)
    m.add_constr({a: 1.0, b: 1.0}, EQ, 1.0)
    m.add_constr({a: 1.0}, GE, 1.0)
    sol = solve_milp(m)
    assert sol.status == MilpSolution.OPTIMAL
    assert sol.values == {"a": 1.0, "b": 0.0}


KNAPSACK = ([12, 7, 11, 8, 9, 6], [24, 13, 23, 15, 16, 10], 45)


def test_knapsack_matches_enumeration():
    w, v, cap = KNAPSACK
    best = max(sum(v[i] for i in s) for r in range(7) for s in itertools.combinations(range(6), r)
               if sum(w[i] for i in s) <= cap)
    m = MilpModel()
    cols = [m.add_var(f"take[{i}]", BINARY, obj=-v[i]) for i in range(6)]
    m.add_constr({j: w[i] for i, j in enumerate(cols)}, LE, cap)
    sol = solve_milp(m)
    assert sol.status == MilpSolution.OPTIMAL
    assert -sol.objective == best
    assert sum(w[i] for i in range(6) if sol[f"take[{i}]"] > 0.5) <= cap


def random_milp(seed):
    rng = np.random.default_rng(seed)
    nb, nc, nr = int(rng.integers(2, 8)), int(rng.integers(0, 3)), int(rng.integers(1, 5))
    m = MilpModel()
    for j in range(nb):
        m.add_var(f"b{j}", BINARY, obj=float(rng.integers(-10, 10)))
    for j in range(nc):
        m.add_var(f"c{j}", CONTINUOUS, 0.0, float(rng.integers(1, 5)), obj=float(rng.integers(-5, 5)))
    for _ in range(nr):
        m.add_constr({j: float(rng.integers(-5, 8)) for j in range(nb + nc)},
                     str(rng.choice([LE, GE])), float(rng.integers(-3, 10)))
    return m, nb


def brute_force(m, nb):
    """Enumerate binaries; the continuous part (at most two columns, boxed) is
    solved by enumerating its box corners and single-row breakpoints."""
    fm = m.freeze()
    A = fm.A.toarray()
    nc = m.n - nb
    best = None
    for bits in itertools.product([0.0, 1.0], repeat=nb):
        bits = np.array(bits)
        r = A[:, :nb] @ bits
        cands = [np.array(p) for p in itertools.product(*[(fm.lb[nb + k], fm.ub[nb + k]) for k in range(nc)])]
        # vertices where one or two rows are tight
        Ac = A[:, nb:]
        G = np.vstack([Ac, np.eye(nc), np.eye(nc)]) if nc else np.zeros((0, 0))
        if nc:
            lo = np.concatenate([fm.row_lo - r, fm.lb[nb:], fm.lb[nb:]])
            hi = np.concatenate([fm.row_hi - r, fm.ub[nb:], fm.ub[nb:]])
            rhs_all = [(i, v) for i in range(len(G)) for v in (lo[i], hi[i]) if np.isfinite(v)]
            for combo in itertools.combinations(rhs_all, nc):
                M = G[[i for i, _ in combo]]
                if abs(np.linalg.det(M)) < 1e-9:
                    continue
                cands.append(np.linalg.solve(M, [v for _, v in combo]))
        for xc in cands:
            x = np.concatenate([bits, xc])
            act = A @ x
            if (np.all(act >= fm.row_lo - 1e-9) and np.all(act <= fm.row_hi + 1e-9)
                    and np.all(x >= fm.lb - 1e-9) and np.all(x <= fm.ub + 1e-9)):
                val = float(fm.c @ x)
                best = val if best is None else min(best, val)
    return best


@pytest.mark.parametrize("seed", range(60))
def test_random_milp_matches_brute_force(seed):
    m, nb = random_milp(seed)
    sol = solve_milp(m)
    want = brute_force(m, nb)
    if want is None:
        assert sol.status == MilpSolution.INFEASIBLE
        return
    assert sol.status == MilpSolution.OPTIMAL
    assert sol.objective == pytest.approx(want, abs=1e-6)
    x = [sol.values[n] for n in m.freeze().names]
    assert m.check_feasibility(x) == []
    inc = [h[1] for h in sol.history]
    bnd = [h[2] for h in sol.history]
    assert all(a >= b for a, b in zip(inc, inc[1:]))
    assert all(a <= b for a, b in zip(bnd, bnd[1:]))


def test_solve_is_deterministic():
    m, _ = random_milp(11)
    a, b = solve_milp(m), solve_milp(m.copy())
    assert (a.objective, a.values, a.nodes, a.iterations) == (b.objective, b.values, b.nodes, b.iterations)


def test_node_limit_reports_limit_reason():
    w, v, cap = KNAPSACK
    m = MilpModel()
    cols = [m.add_var(f"t{i}", BINARY, obj=-v[i]) for i in range(6)]
    m.add_constr({j: w[i] for i, j in enumerate(cols)}, LE, cap)
    sol = solve_milp(m, node_limit=0)
    assert sol.status == MilpSolution.TIME_LIMIT and sol.limit_reason == "nodes"
    assert sol.best_bound <= -max(sum(v[i] for i in s) for r in range(7)
                                   for s in itertools.combinations(range(6), r)
                                   if sum(w[i] for i in s) <= cap) + 1e-9


def test_zero_time_limit():
    m, _ = random_milp(3)
    assert solve_milp(m, time_limit=0.0).status == MilpSolution.TIME_LIMIT


def test_mip_start_becomes_first_incumbent():
    w, v, cap = KNAPSACK
    m = MilpModel()
    cols = [m.add_var(f"t{i}", BINARY, obj=-v[i]) for i in range(6)]
    m.add_constr({j: w[i] for i, j in enumerate(cols)}, LE, cap)
    sol = solve_milp(m, start={"t0": 1.0, "t1": 1.0})
    assert sol.history[0][1] == -(v[0] + v[1])


def test_gap_formula():
    s = MilpSolution(MilpSolution.GAP_LIMIT, 200.0, best_bound=150.0)
    assert s.gap == 25.0


def test_model_invariants():
    m = MilpModel()
    m.add_var("x")
    with pytest.raises(ModelError, match="duplicate"):
        m.add_var("x")
    with pytest.raises(ModelError, match="unknown column"):
        m.add_constr({5: 1.0}, LE, 1.0)
    j = m.add_var("b", BINARY, lb=-3.0, ub=7.0)
    assert (m.variables[j].lb, m.variables[j].ub) == (0.0, 1.0)


@pytest.mark.parametrize("name", ["v[3,1,0,0]@p1w4", "a_b__c", "x-1.5", "ü[ω]", "plain"])
def test_sanitize_round_trip(name):
    tok = sanitize(name)
    assert tok.startswith("v_") and all(ch.isalnum() or ch == "_" for ch in tok)
    assert unsanitize(tok) == name


def test_export_names_are_bijective(tmp_path):
    names = ["a[0]", "a_0", "a__0", "a.0", "a,0", "a-0", "a@0", "A[0]"]
    toks = {sanitize(n) for n in names}
    assert len(toks) == len(names)
    m = MilpModel("bij")
    for n in names:
        m.add_var(n, BINARY, obj=1.0)
    m.add_constr({j: 1.0 for j in range(m.n)}, GE, 1.0, name="cover[all]")
    m.add_sos1([0, 1])
    p = tmp_path / "m.lp"
    export_lp_file(m, p)
    text = p.read_text()
    for tok in toks:
        assert tok in text
    assert "SOS" in text and "Binaries" in text
    assert "c_cover_Lall_R:" in text


def _tiny_model():
    m = MilpModel()
    x = m.add_var("x[0]", ub=5.0, obj=1.0)
    y = m.add_var("y", BINARY, obj=2.0)
    m.add_constr({x: 1.0, y: 3.0}, GE, 4.0, name="cover")
    return m


def test_solution_import(tmp_path):
    m = _tiny_model()
    p = tmp_path / "s.txt"
    p.write_text("# comment\nx[0] 1\nv_y 1\n")
    sol = import_solution_file(m, p)
    assert sol.objective == 3.0 and sol.values == {"x[0]": 1.0, "y": 1.0}


def test_solution_import_names_violated_row(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("x[0] 0.5\ny 1\n")
    with pytest.raises(SolutionFileError, match="cover"):
        import_solution_file(_tiny_model(), p)


def test_solution_import_lists_unknown_names(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("".join(f"z{i} 1\n" for i in range(12)))
    with pytest.raises(SolutionFileError) as err:
        import_solution_file(_tiny_model(), p)
    msg = str(err.value)
    assert "12 unknown" in msg and "z9" in msg and "z10" not in msg


def test_external_solver_reads_export(tmp_path):
    highspy = pytest.importorskip("highspy")
    for seed in range(8):
        m, nb = random_milp(seed)
        ours = solve_milp(m)
        p = tmp_path / f"m{seed}.lp"
        export_lp_file(m, p, sos=False)
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.readModel(str(p))
        h.run()
        status = h.modelStatusToString(h.getModelStatus())
        if ours.status == MilpSolution.INFEASIBLE:
            assert status == "Infeasible"
            continue
        assert h.getInfo().objective_function_value == pytest.approx(ours.objective, abs=1e-6)
        sol_path = tmp_path / f"m{seed}.sol"
        names = h.getLp().col_names_
        vals = h.getSolution().col_value
        sol_path.write_text("".join(f"{n} {v!r}\n" for n, v in zip(names, vals)))
        back = import_solution_file(m, sol_path)
        assert back.objective == pytest.approx(ours.objective, abs=1e-6)


def test_negligible_coefficients_do_not_distort_scaling():
    # a near-zero scenario weight next to unit coefficients
    m = MilpModel()
    u = m.add_var("u", obj=1.0)
    c1 = m.add_var("c1")
    f = [m.add_var(f"f{k}") for k in range(3)]
    m.add_constr({c1: 1.0, f[0]: 0.4, f[1]: 0.6, f[2]: 3e-23, u: -1.0}, LE, 0.0)
    for k, lo in enumerate((100.0, 50.0, 1e4)):
        m.add_constr({f[k]: 1.0, c1: 2.0}, GE, lo)
    m.add_constr({c1: 1.0}, GE, 5.0)
    s = SimplexSolver(m)
    assert s.R.max() / s.R.min() < 1e4 and s.C.max() / s.C.min() < 1e4
    # raising c1 pays until f1 hits zero at c1 = 25
    assert solve_lp(m).objective == pytest.approx(25.0 + 0.4 * 50 + 3e-23 * 9950, rel=1e-12)
