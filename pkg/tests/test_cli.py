import csv
import json
import math

import pytest

from polyshrink.cli import ConfigError, build_config, main, parse_c_grid, read_config, read_scores

FAST = ["--n-iter", "60", "--burn-in", "20", "--quiet"]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- config files ------------------------------------------------------------

def test_config_file_parses_aliases_and_comments(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\npreset = sim2\nn = 50, 100\nt = 2.2\nreplications = 3  # few\nn_iter = 100\nburn_in = 20\n")
    config = build_config(read_config(cfg))
    assert config.n_values == (50, 100) and config.replications == 3
    assert config.chain.n_iter == 100 and len(config.prior_specs) == 2


@pytest.mark.parametrize("text,line", [("n = 50\nbogus = 1\n", 2), ("n = 50\nn = 60\n", 2), ("no equals\n", 1),
                                       ("replications = 0\nn = 50\n", None)])
def test_config_errors_carry_line(tmp_path, text, line):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    with pytest.raises(ConfigError) as info:
        build_config(read_config(cfg))
    if line is not None:
        assert info.value.line == line


def test_simulate_missing_config_writes_nothing(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", str(tmp_path / "missing.cfg"), "--out", str(out), "--quiet"]) != 0
    assert not out.exists()


def test_simulate_bad_key_reports_line(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n = 50\nwidget = 3\n")
    out = tmp_path / "out"
    assert main(["simulate", str(cfg), "--out", str(out), "--quiet"]) == 2
    assert "line 2" in capsys.readouterr().err and not out.exists()


# --- simulate ----------------------------------------------------------------

def test_simulate_preset_smoke(tmp_path):
    out = tmp_path / "out"
    rc = main(["simulate", "--preset", "sim1", "--n", "50", "--replications", "2", "--out", str(out), *FAST])
    assert rc == 0
    rows = read_rows(out / "results.csv")
    cells = {(r["n"], r["prior_label"], r["t"]) for r in rows}
    assert len(cells) == 24
    assert {r["metric"] for r in rows} >= {"contraction_prob", "l2_sq", "l1", "coverage_active", "l2_sq_minimax"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["command"] == "simulate"
    assert json.loads((out / "results.json").read_text())["cells"]


def test_simulate_same_seed_same_bytes(tmp_path):
    args = ["simulate", "--preset", "sim2", "--n", "50", "--t", "4.2", "--replications", "2", "--seed", "5", *FAST]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b"), "--parallelism", "2"]) == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_simulate_rejects_bad_prior(tmp_path):
    assert main(["simulate", "--priors", "cauchy/fixed:1", "--out", str(tmp_path / "o"), "--quiet"]) == 2


# --- analyze -----------------------------------------------------------------

def test_p_value_conversion(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("p\n0.5\n0.05\n")
    _, z = read_scores(f, "p")
    assert z[0] == pytest.approx(-0.6745, abs=1e-4)
    assert z[1] == pytest.approx(-1.95996, abs=1e-4)


@pytest.mark.parametrize("body", ["p\n0.5\n1.0\n", "p\n0.5\n0\n", "p\n0.5\nabc\n", "p\n"])
def test_bad_p_values_abort(tmp_path, body):
    f = tmp_path / "p.csv"
    f.write_text(body)
    out = tmp_path / "out"
    assert main(["analyze", str(f), "--col", "p", "--out", str(out), "--quiet"]) == 2
    assert not out.exists()


def test_bad_rows_are_all_reported(tmp_path, capsys):
    f = tmp_path / "p.csv"
    f.write_text("p\n2\n0.3\n-1\n")
    assert main(["analyze", str(f), "--col", "p", "--out", str(tmp_path / "o"), "--quiet"]) == 2
    err = capsys.readouterr().err
    assert "row 1" in err and "row 3" in err


def test_analyze_writes_summary_and_counts(tmp_path):
    f = tmp_path / "z.csv"
    f.write_text("gene,z\n" + "".join(f"g{i},{v}\n" for i, v in enumerate([0.1, -0.5, 6.0, 0.3, -7.0, 0.0, 1.2, 0.8])))
    out = tmp_path / "out"
    rc = main(["analyze", str(f), "--id-column", "gene", "--shrinkage", "beta:2", "--n-iter", "400",
               "--burn-in", "100", "--out", str(out), "--quiet", "--seed", "3"])
    assert rc == 0
    rows = read_rows(out / "summary.csv")
    assert [r["id"] for r in rows] == [f"g{i}" for i in range(8)]
    assert rows[5]["shrink_ratio"] == "nan"
    manifest = json.loads((out / "manifest.json").read_text())
    sel = manifest["selection"]
    assert sel["n"] == 8 and sel["selected_shrink"] == sum(r["selected_shrink"] == "1" for r in rows)
    assert rows[2]["selected_shrink"] == "1" and rows[4]["selected_interval"] == "1"


def test_analyze_schedule_needs_s(tmp_path):
    f = tmp_path / "z.csv"
    f.write_text("z\n1\n2\n")
    assert main(["analyze", str(f), "--shrinkage", "sparsity:sharp", "--out", str(tmp_path / "o"), "--quiet"]) == 2


# --- profile -----------------------------------------------------------------

def test_profile_deterministic(tmp_path):
    args = ["profile", "--n-over-s", "100,1000", "--c-grid", "0.5,1,2,4", "--quiet"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "profile.csv").read_bytes()
    assert a == (tmp_path / "b" / "profile.csv").read_bytes()
    rows = read_rows(tmp_path / "a" / "profile.csv")
    assert len(rows) == 8
    assert float(rows[0]["tau"]) == pytest.approx(100**-11.5, rel=1e-9)
    assert math.isfinite(float(rows[0]["threshold"]))


def test_profile_warns_without_threshold(tmp_path):
    assert main(["profile", "--tau-rule", "fixed:0.5", "--n-over-s", "100", "--c-grid", "1",
                 "--out", str(tmp_path / "o"), "--quiet"]) == 0
    assert read_rows(tmp_path / "o" / "profile.csv")[0]["warning"].startswith("no threshold")


@pytest.mark.parametrize("grid", ["", "2:1:0.1", "0:1:0.5"])
def test_profile_rejects_bad_grid(tmp_path, grid):
    out = tmp_path / "o"
    assert main(["profile", "--c-grid", grid, "--out", str(out), "--quiet"]) != 0
    assert not out.exists()


def test_c_grid_parsing():
    assert parse_c_grid("0.1:0.5:0.1") == pytest.approx([0.1, 0.2, 0.3, 0.4, 0.5])
    assert parse_c_grid("1, 2.5") == [1.0, 2.5]


# --- oracle-check ------------------------------------------------------------

def test_oracle_check_passes(tmp_path):
    out = tmp_path / "o"
    assert main(["oracle-check", "--out", str(out), "--quiet"]) == 0
    rows = read_rows(out / "report.csv")
    assert {r["check"] for r in rows} >= {"lattice", "conjugate", "joint"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and all(manifest["summary"].values())
    for key in ("command", "config", "seed", "version", "started_at", "finished_at", "outputs"):
        assert key in manifest


def test_oracle_check_detects_injected_fault(tmp_path):
    out = tmp_path / "o"
    assert main(["oracle-check", "--inject-fault", "rate", "--out", str(out), "--quiet"]) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed" and not all(manifest["summary"].values())
