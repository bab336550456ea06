import csv

import pytest

from mfapprox.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_SHAPE, EXIT_TOLERANCE, main


@pytest.fixture
def out(tmp_path, monkeypatch):
    d = tmp_path / "out"
    monkeypatch.setenv("MFAPPROX_OUTPUT_DIR", str(d))
    monkeypatch.chdir(tmp_path)
    return d


def data_rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write(path, text):
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------- w2


def test_w2_identical_files(tmp_path, capsys):
    a = write(tmp_path / "a.csv", "0\n2\n")
    assert main(["w2", a, a]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "0.0"


def test_w2_known_pair_and_plan(tmp_path, capsys):
    a = write(tmp_path / "a.csv", "0\n2\n")
    b = write(tmp_path / "b.csv", "3\n1\n")
    plan = tmp_path / "plan.csv"
    assert main(["w2", a, b, "--plan", str(plan)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "1.0"
    assert [(r["i"], r["j"]) for r in data_rows(plan)] == [("0", "1"), ("1", "0")]


@pytest.mark.parametrize("text", ["0,1\n2\n", "0\nabc\n", ""])
def test_w2_parse_errors(tmp_path, text):
    a = write(tmp_path / "a.csv", "0\n2\n")
    bad = write(tmp_path / "bad.csv", text)
    assert main(["w2", a, bad]) == EXIT_CONFIG


def test_w2_missing_file(tmp_path):
    a = write(tmp_path / "a.csv", "0\n")
    assert main(["w2", a, str(tmp_path / "nope.csv")]) == EXIT_CONFIG


@pytest.mark.parametrize("other", ["0\n1\n2\n", "0,0\n1,1\n"])
def test_w2_shape_mismatch(tmp_path, other):
    a = write(tmp_path / "a.csv", "0\n2\n")
    b = write(tmp_path / "b.csv", other)
    assert main(["w2", a, b]) == EXIT_SHAPE


# ---------------------------------------------------------------- lift-check


def test_lift_check_default_passes(out):
    assert main(["lift-check", "--seed", "0"]) == EXIT_OK
    rows = data_rows(out / "lift_check.csv")
    assert {r["suite"] for r in rows} == {"lift_identity[random]", "locality[random]", "lifted_derivatives"}
    assert all(r["verdict"] == "pass" for r in rows)


@pytest.mark.parametrize("key", ["lift_tol", "deriv_tol"])
def test_lift_check_zero_tolerance_fails(out, capsys, key):
    assert main(["lift-check", "--seed", "0", "--set", f"{key}=0"]) == EXIT_TOLERANCE
    assert "first offending instance" in capsys.readouterr().err


def test_lift_check_unknown_preset(out):
    assert main(["lift-check", "--seed", "0", "--set", "preset=nope"]) == EXIT_CONFIG


def test_lift_check_all_presets(out):
    assert main(["lift-check", "--seed", "1", "--set", "preset=all", "--set", "lift_instances=20", "--set", "deriv_instances=20"]) == EXIT_OK
    assert len(data_rows(out / "lift_check.csv")) == 11


def test_missing_seed_rejected(out):
    assert main(["lift-check"]) == EXIT_CONFIG
    assert main(["converge"]) == EXIT_CONFIG
    assert not out.exists()


# ---------------------------------------------------------------- converge


def test_converge_lq_default(out):
    assert main(["converge", "--seed", "0", "--svg"]) == EXIT_OK
    gaps = [float(r["gap"]) for r in data_rows(out / "converge_lq.csv")]
    assert all(abs(b) < abs(a) for a, b in zip(gaps, gaps[1:]))
    assert (out / "converge_lq.svg").read_text().startswith("<svg")


def test_converge_bytes_identical_across_runs_and_workers(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    args = ["converge", "--seed", "3", "--set", "preset=bounded_drift", "--set", "solver=policy_search", "--set", "reps=20", "--set", "Ns=2 4", "--svg"]
    assert main(args + ["--output-dir", "a"]) == EXIT_OK
    assert main(args + ["--output-dir", "b", "--workers", "3"]) == EXIT_OK
    for name in ("converge_bounded_drift.csv", "converge_bounded_drift.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_file_equals_overrides(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    ini = write(tmp_path / "run.ini", "[converge]\nseed = 5\nNs = 2, 8, 32\nq = 0.3\noutput_dir = from_ini\n")
    assert main(["converge", "--config", ini]) in (EXIT_OK, EXIT_TOLERANCE)
    assert main(["converge", "--seed", "5", "--set", "Ns=2 8 32", "--set", "q=0.3", "--output-dir", "from_flags"]) in (EXIT_OK, EXIT_TOLERANCE)
    assert (tmp_path / "from_ini" / "converge_lq.csv").read_bytes() == (tmp_path / "from_flags" / "converge_lq.csv").read_bytes()


def test_env_output_dir_beats_config(tmp_path, out):
    ini = write(tmp_path / "run.ini", "[converge]\nseed = 1\noutput_dir = ignored\n")
    main(["converge", "--config", ini])
    assert (out / "converge_lq.csv").exists()
    assert not (tmp_path / "ignored").exists()


@pytest.mark.parametrize(
    "override",
    ["reps=0", "bogus=1", "Ns=8 2", "Ns=two", "preset=nope", "solver=magic", "target=cauchy", "method=quantile\ttarget=gaussian_nd", "include_runtime=maybe"],
)
def test_converge_config_errors(out, override):
    sets = []
    for item in override.split("\t"):
        sets += ["--set", item]
    assert main(["converge", "--seed", "0", *sets]) == EXIT_CONFIG


def test_converge_missing_config_file(out):
    assert main(["converge", "--seed", "0", "--config", "missing.ini"]) == EXIT_CONFIG


def test_converge_interior_violation_is_config_error(out):
    assert main(["converge", "--seed", "0", "--set", "a_max=0.5"]) == EXIT_CONFIG


def test_converge_runtime_error_exit_code(out, capsys):
    # finite-time blow-up of the Riccati flow
    sets = ["kappa=-30", "q=50", "r=0.001", "T=5", "a_max=1e9", "state_bound=0"]
    assert main(["converge", "--seed", "0", *[x for s in sets for x in ("--set", s)]]) == EXIT_RUNTIME
    assert "SolverError" in capsys.readouterr().err


# ---------------------------------------------------------------- chaos


def test_chaos_default_passes(out):
    assert main(["chaos", "--seed", "0"]) == EXIT_OK
    rows = data_rows(out / "chaos_ou.csv")
    assert rows[-1]["N"] == "1024" and rows[-1]["verdict"] == "pass"


def test_chaos_small_run_deterministic(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    args = ["chaos", "--seed", "4", "--set", "dt=0.01", "--set", "Ns=4 16", "--set", "reps=30", "--set", "pilot_reps=30", "--svg"]
    assert main(args + ["--output-dir", "a"]) in (EXIT_OK, EXIT_TOLERANCE)
    assert main(args + ["--output-dir", "b", "--workers", "2"]) in (EXIT_OK, EXIT_TOLERANCE)
    for name in ("chaos_ou.csv", "chaos_ou.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("override", ["reps=0", "preset=double_well", "Ns=0 4"])
def test_chaos_config_errors(out, override):
    assert main(["chaos", "--seed", "0", "--set", override]) == EXIT_CONFIG


# ---------------------------------------------------------------- hjb-grid


def test_hjb_grid_heat_default(out):
    assert main(["hjb-grid"]) == EXIT_OK
    text = (out / "hjb_grid_heat_N1.csv").read_text()
    assert "# verdict = pass" in text
    assert len(data_rows(out / "hjb_grid_heat_N1.csv")) == 121


def test_hjb_grid_tolerance_failure(out):
    assert main(["hjb-grid", "--set", "tol=1e-6"]) == EXIT_TOLERANCE
    assert "# verdict = fail" in (out / "hjb_grid_heat_N1.csv").read_text()


def test_hjb_grid_cfl_is_runtime_error(out):
    assert main(["hjb-grid", "--set", "points=601", "--set", "dt=0.1"]) == EXIT_RUNTIME


@pytest.mark.parametrize("override", ["N=3", "N=2", "preset=wave", "points=2"])
def test_hjb_grid_config_errors(out, override):
    assert main(["hjb-grid", "--set", override]) == EXIT_CONFIG


def test_hjb_grid_bounded_drift_has_no_verdict(out):
    assert main(["hjb-grid", "--set", "preset=bounded_drift", "--set", "lo=-3", "--set", "hi=3", "--set", "points=41"]) == EXIT_OK
    assert "verdict" not in (out / "hjb_grid_bounded_drift_N1.csv").read_text()


# ---------------------------------------------------------------- simulate


def test_simulate_outputs(out):
    assert main(["simulate", "--seed", "1", "--set", "reps=4", "--set", "N=3", "--set", "dt=0.1"]) == EXIT_OK
    paths = data_rows(out / "simulate_ou_paths.csv")
    assert len(paths) == 11 * 3 and list(paths[0]) == ["step", "time", "particle", "x0"]
    assert len(data_rows(out / "simulate_ou_summary.csv")) == 4


@pytest.mark.parametrize("dyn,policy", [("lq", "lq_feedback"), ("bounded_drift", "toward_origin")])
def test_simulate_controlled(out, dyn, policy):
    assert main(["simulate", "--seed", "2", "--set", f"dynamics={dyn}", "--set", f"policy={policy}", "--set", "reps=3"]) == EXIT_OK


def test_simulate_bound_violation(out, capsys):
    sets = ["dynamics=lq", "a_max=0.01", "state_bound=0", "kappa=5"]
    assert main(["simulate", "--seed", "0", *[x for s in sets for x in ("--set", s)]]) == EXIT_RUNTIME
    assert "BoundViolation" in capsys.readouterr().err


def test_simulate_policy_mismatch(out):
    assert main(["simulate", "--seed", "0", "--set", "policy=lq_feedback"]) == EXIT_CONFIG


# ---------------------------------------------------------------- help


def test_help_documents_schemas(capsys):
    for cmd, col in [("converge", "value_per_particle"), ("chaos", "bias_budget"), ("hjb-grid", "interior_sup_error"), ("w2", "--plan")]:
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        assert col in capsys.readouterr().out


def test_unknown_subcommand_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_CONFIG
