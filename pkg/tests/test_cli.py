import csv
import json
import statistics

import pytest

from cddro.cli import EXIT_INFEASIBLE, EXIT_LIMIT, EXIT_OK, EXIT_VALIDATION, main

SHAPE = "2,2,2,1,1,3"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--seed", "3", "--shape", SHAPE, "--out", str(d / "inst.json")]) == EXIT_OK
    assert main(["ambiguity", "--instance", str(d / "inst.json"), "--per-family", "2",
                 "--max-members", "2", "--seed", "3", "--out", str(d / "amb.json")]) == EXIT_OK
    return d


def run(*argv):
    return main([str(a) for a in argv])


def test_gen_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("gen", "--seed", 7, "--shape", "I1", "--out", tmp_path / f"{name}.json") == EXIT_OK
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    data = json.loads((tmp_path / "a.json").read_text())
    assert len(data["scenarios"]) == 5


def test_invalid_shape_exits_nonzero(tmp_path, capsys):
    assert run("gen", "--seed", 1, "--shape", "1,2", "--out", tmp_path / "x.json") == EXIT_VALIDATION
    assert "error" in capsys.readouterr().err


def test_missing_argument_is_a_validation_error():
    assert run("solve") == EXIT_VALIDATION


def test_ambiguity_centile_on_i1(tmp_path):
    run("gen", "--seed", 1, "--shape", "I1", "--out", tmp_path / "i1.json")
    assert run("ambiguity", "--instance", tmp_path / "i1.json", "--per-family", 20, "--centile", 10,
               "--seed", 1, "--out", tmp_path / "p.json") == EXIT_OK
    data = json.loads((tmp_path / "p.json").read_text())
    assert data["meta"]["candidates"] == 80
    assert len(data["members"]) == 8
    lines = (tmp_path / "p.stats.csv").read_text().splitlines()
    assert len(lines) == 6


def test_zero_radius_gives_an_empty_set(workdir, tmp_path, caplog):
    assert run("ambiguity", "--instance", workdir / "inst.json", "--per-family", 2, "--theta", 0,
               "--seed", 3, "--out", tmp_path / "e.json") == EXIT_OK
    assert json.loads((tmp_path / "e.json").read_text())["members"] == []
    assert "empty" in caplog.text
    assert run("solve", "--instance", workdir / "inst.json", "--ambiguity", tmp_path / "e.json") == EXIT_VALIDATION


def test_exact_and_oracle_agree(workdir):
    assert run("solve", "--instance", workdir / "inst.json", "--ambiguity", workdir / "amb.json",
               "--quiet", "--out", workdir / "exact.json") == EXIT_OK
    assert run("solve", "--instance", workdir / "inst.json", "--ambiguity", workdir / "amb.json",
               "--method", "oracle", "--quiet", "--out", workdir / "oracle.json") == EXIT_OK
    exact = json.loads((workdir / "exact.json").read_text())
    oracle = json.loads((workdir / "oracle.json").read_text())
    assert exact["solution"]["objective"] == pytest.approx(oracle["objective"], abs=1e-6)
    assert exact["dimensions"]["m"] > 0


def test_slack_sd_equals_rn(workdir, tmp_path):
    cfg = json.dumps({"profiles": [{"threshold": 1e12, "surplus_cap": 0, "expected_cap": 0}]})
    assert run("solve", "--instance", workdir / "inst.json", "--ambiguity", workdir / "amb.json",
               "--model", "sd", "--sd-config", cfg, "--quiet", "--out", tmp_path / "sd.json") == EXIT_OK
    rn = tmp_path / "rn.json"
    run("solve", "--instance", workdir / "inst.json", "--ambiguity", workdir / "amb.json", "--quiet", "--out", rn)
    sd = json.loads((tmp_path / "sd.json").read_text())
    assert sd["solution"]["objective"] == pytest.approx(json.loads(rn.read_text())["solution"]["objective"],
                                                        abs=1e-6)
    assert sd["selected_member"] in (0, 1)


def test_sd_without_config_is_rejected(workdir):
    assert run("solve", "--instance", workdir / "inst.json", "--ambiguity", workdir / "amb.json",
               "--model", "sd") == EXIT_VALIDATION


def test_zero_time_limit(workdir, tmp_path):
    code = run("solve", "--instance", workdir / "inst.json", "--ambiguity", workdir / "amb.json",
               "--limits", '{"time_limit": 0}', "--quiet", "--out", tmp_path / "t.json")
    assert code == EXIT_LIMIT
    assert json.loads((tmp_path / "t.json").read_text())["solution"]["status"] == "time_limit"


def test_infeasible_sd_exit_code(workdir, tmp_path):
    cfg = json.dumps({"profiles": [{"threshold": 0, "surplus_cap": 0, "expected_cap": 0}]})
    assert run("solve", "--instance", workdir / "inst.json", "--ambiguity", workdir / "amb.json",
               "--model", "sd", "--sd-config", cfg, "--quiet") == EXIT_INFEASIBLE


def test_export_lp_and_stats_only(workdir, tmp_path):
    lp = tmp_path / "m.lp"
    assert run("solve", "--instance", workdir / "inst.json", "--ambiguity", workdir / "amb.json",
               "--export-lp", lp, "--quiet", "--out", tmp_path / "x.json") == EXIT_OK
    text = lp.read_text()
    assert text.startswith("\\ LIP-RN") and "Subject To" in text and text.rstrip().endswith("End")
    assert run("solve", "--instance", workdir / "inst.json", "--ambiguity", workdir / "amb.json",
               "--stats-only", "--quiet", "--out", tmp_path / "s.json") == EXIT_OK
    dims = json.loads((tmp_path / "s.json").read_text())["dimensions"]
    assert dims == json.loads((tmp_path / "x.json").read_text())["dimensions"]
    assert set(dims) == {"m", "n01", "nc", "nz"}


def test_degenerate_bounds_have_zero_gap(tmp_path):
    run("gen", "--seed", 2, "--shape", "1,2,2,1,1,3", "--out", tmp_path / "i.json")
    run("ambiguity", "--instance", tmp_path / "i.json", "--per-family", 1, "--families", "Normal",
        "--max-members", 1, "--out", tmp_path / "a.json")
    assert run("bounds", "--instance", tmp_path / "i.json", "--ambiguity", tmp_path / "a.json",
               "--clusters-per-member", 1, "--reference", 1000, "--quiet", "--out", tmp_path / "b.json") == EXIT_OK
    rep = json.loads((tmp_path / "b.json").read_text())
    assert rep["GAP_H"] == pytest.approx(0.0, abs=1e-9)
    assert rep["GR_H"] == rep["z_UB"] / 1000
    assert "timings" not in rep
    row = next(csv.DictReader((tmp_path / "b.csv").open()))
    assert float(row["z_H_upper"]) == rep["z_UB"] and row["t_H_upper"] == ""


def test_bounds_are_independent_of_threads(workdir, tmp_path):
    outs = []
    for t in (1, 2):
        out = tmp_path / f"b{t}.json"
        assert run("bounds", "--instance", workdir / "inst.json", "--ambiguity", workdir / "amb.json",
                   "--ld-iterations", 2, "--threads", t, "--quiet", "--out", out) == EXIT_OK
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_bad_limit_group(workdir):
    assert run("bounds", "--instance", workdir / "inst.json", "--ambiguity", workdir / "amb.json",
               "--limits", '{"subs": {}}') == EXIT_VALIDATION


def test_report_matches_independent_quartiles(tmp_path):
    totals = [12.0, 3.5, 7.25, 40.0, 9.0]
    data = {"config": {"model": "rn"},
            "scenario_costs": [{"member": 0, "name": "Gamma:1", "scenario": s, "total": v}
                               for s, v in enumerate(totals)]}
    src = tmp_path / "s.json"
    src.write_text(json.dumps(data))
    assert run("report", "--inputs", src, "--out", tmp_path / "r.csv") == EXIT_OK
    (row,) = list(csv.DictReader((tmp_path / "r.csv").open()))
    q1, med, q3 = statistics.quantiles(totals, n=4, method="inclusive")
    assert [float(row[k]) for k in ("min", "q1", "median", "q3", "max")] == \
        pytest.approx([min(totals), q1, med, q3, max(totals)], abs=1e-12)
    assert row["n"] == "5" and row["name"] == "Gamma:1"


def test_report_single_member_from_solve(workdir, tmp_path):
    src = workdir / "exact.json"
    if not src.exists():
        run("solve", "--instance", workdir / "inst.json", "--ambiguity", workdir / "amb.json",
            "--quiet", "--out", src)
    assert run("report", "--inputs", src, "--out", tmp_path / "r.csv") == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "r.csv").open()))
    costs = json.loads(src.read_text())["scenario_costs"]
    assert len(rows) == len({r["member"] for r in costs})


def test_report_needs_inputs(capsys):
    assert run("report") == EXIT_VALIDATION
    assert "at least one input" in capsys.readouterr().err
