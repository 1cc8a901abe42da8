import json

import pytest

from shortfall import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


SMALL = ("--grid-u", "17", "--grid-v", "33", "--w-candidates", "17")


def test_risk_json_echoes_config(capsys):
    code, out, _ = run(capsys, "risk", "--n", "3", "--lambda", "0.01", "--mu", "0.01", "--x", "0.02", *SMALL)
    assert code == 0
    doc = json.loads(out)
    assert doc["format_version"] == cli.FORMAT_VERSION
    assert doc["command"] == "risk"
    assert doc["config"]["lambda"] == 0.01
    assert doc["config"]["grid_u"] == 17
    assert doc["result"]["x"] == 0.02
    assert 0.0 < doc["result"]["R_n"] <= doc["result"]["snell"]


def test_zero_capital_risk_equals_snell(capsys):
    _, out, _ = run(capsys, "risk", "--n", "4", "--x", "0", "--lambda", "0.02", *SMALL)
    _, snell, _ = run(capsys, "snell", "--n", "4")
    assert json.loads(out)["result"]["R_n"] == pytest.approx(json.loads(snell)["result"]["snell"], abs=1e-12)


def test_reports_are_byte_identical(capsys):
    argv = ("frontier", "--n", "3", "--lambda", "0.01", "--x-points", "11", *SMALL)
    first = run(capsys, *argv)[1]
    second = run(capsys, *argv)[1]
    assert first == second


def test_csv_output(capsys):
    code, out, _ = run(capsys, "converge", "--n-list", "2,4", "--format", "csv", *SMALL)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "# format_version=1"
    assert "# n_list=[2, 4]" in lines
    body = [l for l in lines if not l.startswith("#")]
    assert body[0] == "n,R_n,grid_residual,abs_diff_prev"
    assert [row.split(",")[0] for row in body[1:]] == ["2", "4"]


def test_config_precedence(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# test file\nn = 3\nsigma = 0.3   # inline comment\nstrike = 1.1\n")
    _, out, _ = run(capsys, "snell", "--config", str(cfg), "--strike", "0.9")
    doc = json.loads(out)
    assert doc["config"]["n"] == 3
    assert doc["config"]["sigma"] == 0.3
    assert doc["config"]["strike"] == 0.9
    monkeypatch.setenv(cli.CONFIG_ENV, str(cfg))
    _, out, _ = run(capsys, "snell")
    assert json.loads(out)["config"]["strike"] == 1.1


def test_output_file(tmp_path, capsys):
    target = tmp_path / "out.json"
    code, out, _ = run(capsys, "snell", "--out", str(target))
    assert code == 0 and out == ""
    assert json.loads(target.read_text())["command"] == "snell"


@pytest.mark.parametrize(
    "argv",
    [
        ("snell", "--sigma", "-0.2"),
        ("risk", "--mu", "1.5"),
        ("snell", "--payoff", "digital"),
        ("snell", "--payoff", "capped-call"),
        ("oracle", "--n", "4"),
        ("simulate", "--n-list", "2", "--n", "2"),
        ("snell", "--format", "xml"),
        ("converge", "--n-list", "8,4"),
        ("risk", "--n", "13", "--payoff", "call", "--x", "-1"),
    ],
)
def test_configuration_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == cli.EXIT_CONFIG
    assert "configuration error" in err


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("volatility = 0.2\n")
    assert run(capsys, "snell", "--config", str(cfg))[0] == 2
    assert run(capsys, "snell", "--config", str(tmp_path / "missing.cfg"))[0] == 2


def test_grid_escape_exits_3(capsys):
    code, _, err = run(capsys, "risk", "--n", "4", "--lambda", "0.01", "--mu", "0.01", "--u-max", "0.02", *SMALL)
    assert code == cli.EXIT_GRID
    assert "grid escape" in err


def test_oracle_command(capsys):
    code, out, _ = run(capsys, "oracle", "--n", "2", "--lambda", "0.01", "--mu", "0.01", "--oracle-grid", "51")
    doc = json.loads(out)["result"]
    assert code == 0
    assert doc["abs_gap"] <= 1e-3


def test_simulate_command(capsys, tmp_path):
    code, out, _ = run(
        capsys, "simulate", "--n-list", "2,4", "--n", "2", "--paths", "20", "--seed", "3",
        "--steps-per-move", "100", "--lambda", "0.01", *SMALL,
    )
    assert code == 0
    doc = json.loads(out)["result"]
    assert doc["bracket"]["lift_violations"] == 0
    assert doc["bracket"]["upper_proxy_heuristic"] is True
    assert {d["estimator"] for d in doc["diagnostics"]} == {"sup_price_gap", "max_theta_gap", "sup_payoff_gap"}


def test_dump_grids(capsys, tmp_path):
    target = tmp_path / "g.npz"
    assert run(capsys, "risk", "--n", "2", "--dump", str(target), *SMALL)[0] == 0
    assert target.exists()


def test_constant_payoff(capsys):
    _, out, _ = run(capsys, "snell", "--payoff", "constant", "--amount", "0.25")
    assert json.loads(out)["result"]["snell"] == 0.25


def test_capped_call_at_cap_reports_zero(capsys):
    _, out, _ = run(capsys, "risk", "--payoff", "capped-call", "--cap", "0.1", "--x", "0.1", "--n", "4",
                    "--lambda", "0.01", "--mu", "0.01", *SMALL)
    assert json.loads(out)["result"]["R_n"] == pytest.approx(0.0, abs=1e-9)


def test_converge_null_claim_and_costs(capsys):
    _, out, _ = run(capsys, "converge", "--payoff", "constant", "--n-list", "2,4", *SMALL)
    assert all(r["R_n"] == 0.0 for r in json.loads(out)["result"]["rows"])
    base = json.loads(run(capsys, "converge", "--n-list", "2,4", "--x", "0.03", "--lambda", "0.01",
                          "--mu", "0.01", *SMALL)[1])["result"]["rows"]
    dbl = json.loads(run(capsys, "converge", "--n-list", "2,4", "--x", "0.03", "--lambda", "0.02",
                         "--mu", "0.02", *SMALL)[1])["result"]["rows"]
    assert all(b["R_n"] <= d["R_n"] + 1e-9 for b, d in zip(base, dbl))


def test_frontier_starts_at_snell(capsys):
    doc = json.loads(run(capsys, "frontier", "--n", "4", "--lambda", "0.01", "--x-points", "21", *SMALL)[1])
    snell = json.loads(run(capsys, "snell", "--n", "4")[1])["result"]["snell"]
    R = doc["result"]["R"]
    assert R[0] == pytest.approx(snell, abs=1e-12)
    assert all(a >= b - 1e-10 for a, b in zip(R, R[1:]))


def test_wealth_path_export(capsys, tmp_path):
    target = tmp_path / "path.csv"
    code, out, _ = run(capsys, "risk", "--n", "3", "--lambda", "0.01", "--wealth-path", "+-+",
                       "--wealth-csv", str(target), *SMALL)
    assert code == 0
    rows = json.loads(out)["result"]["wealth_path"]
    assert [r["k"] for r in rows] == [0, 1, 2, 3]
    lines = target.read_text().splitlines()
    assert lines[0] == "k,V,v,w"
    assert len(lines) == 5
    assert run(capsys, "risk", "--n", "3", "--wealth-path", "+x", *SMALL)[0] == 2
