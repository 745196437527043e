import copy
import csv

import pytest
import yaml

from cmgems.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, SWEEP_COLUMNS, main
from cmgems.config import bundle_path
from cmgems.profiles import load_profiles


def _write(tmp_path, data, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


@pytest.fixture
def pair():
    return yaml.safe_load(bundle_path("pair_a").read_text())


def test_run_writes_report_and_trace(tmp_path, capsys):
    assert main(["run", "--config", "pair_a", "--out", str(tmp_path)]) == EXIT_OK
    report = (tmp_path / "report.txt").read_text()
    assert "energy_absorbed_kwh=40.0\n" in report
    assert (tmp_path / "trace.csv").read_text().startswith("tick,cluster,balance_kw,pcc_flow_kw\n")
    out = capsys.readouterr().out
    assert "Energy absorbed from main grid [kWh]" in out and "40.00" in out


def test_run_scenario_override(tmp_path, capsys):
    assert main(["run", "--config", "pair_a", "--scenario", "1", "--out", str(tmp_path)]) == EXIT_OK
    assert "market_rounds=0" in (tmp_path / "report.txt").read_text()


def test_sweep_writes_csv(tmp_path):
    code = main(["sweep", "--config", "pair_b", "--axis", "delay", "--values", "0,2", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "sweep_delay.csv").open()))
    assert tuple(rows[0]) == SWEEP_COLUMNS
    assert [float(r["value"]) for r in rows] == [0.0, 2.0]


@pytest.mark.parametrize("values", ["", ",", "a,b", "1,inf"])
def test_sweep_rejects_bad_values(tmp_path, values, capsys):
    code = main(["sweep", "--config", "pair_a", "--axis", "sod", "--values", values, "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "usage error" in capsys.readouterr().err


def test_sweep_rejects_invalid_threshold(tmp_path):
    assert main(["sweep", "--config", "pair_a", "--axis", "sod", "--values", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_oracle_on_pairs(capsys):
    assert main(["oracle", "--config", "pair_b"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "tick,heuristic_injection_kw,oracle_injection_kw,gap_kw"
    assert len(lines) == 1 + 10
    assert all(line.endswith(",0.0") for line in lines[1:])


def test_oracle_short_horizon_on_reference_bundle(capsys):
    assert main(["oracle", "--config", "weekday", "--ticks", "12"]) in (EXIT_OK, EXIT_CHECK)
    assert len(capsys.readouterr().out.splitlines()) == 3


def test_oracle_rejects_cycles(tmp_path, pair):
    pair["clusters"].append({"id": "C", "role": "campus", "pcc": {"capacity_kw": 10, "switch": "PC"}})
    pair["links"] += [{"a": "B", "b": "C", "capacity_kw": 5, "switch": "LBC"},
                      {"a": "A", "b": "C", "capacity_kw": 5, "switch": "LAC"}]
    pair["profiles"]["balance_kw"]["C"] = 0
    assert main(["oracle", "--config", _write(tmp_path, pair)]) == EXIT_CONFIG


def test_config_error_exit(tmp_path, pair, capsys):
    del pair["tariff"]
    assert main(["run", "--config", _write(tmp_path, pair), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "[tariff]" in capsys.readouterr().err


def test_infeasible_exit(tmp_path, pair):
    pair["profiles"]["balance_kw"] = {"A": 500, "B": 0}
    assert main(["run", "--config", _write(tmp_path, pair), "--out", str(tmp_path)]) == EXIT_INFEASIBLE


def test_missing_config_is_io_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == EXIT_IO


def test_gen_profiles_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["gen-profiles", "--config", "weekday", "--seed", "3", "--out", str(a)]) == EXIT_OK
    assert main(["gen-profiles", "--config", "weekday", "--seed", "3", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    profiles = load_profiles(a)
    assert len(profiles) == 114 and len(profiles[0]) == 1440


def test_generated_csv_drives_a_run(tmp_path, pair):
    data = yaml.safe_load(bundle_path("weekday").read_text())
    data["sim"]["duration_ticks"] = 30
    cfg = _write(tmp_path, data, "wd.yaml")
    assert main(["gen-profiles", "--config", cfg, "--out", str(tmp_path / "m.csv")]) == EXIT_OK
    csv_cfg = copy.deepcopy(data)
    csv_cfg["profiles"] = {"source": "csv", "path": "m.csv"}
    out = tmp_path / "run"
    assert main(["run", "--config", _write(tmp_path, csv_cfg, "wd_csv.yaml"), "--out", str(out)]) == EXIT_OK
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "run2")]) == EXIT_OK
    assert (out / "report.txt").read_text() == (tmp_path / "run2" / "report.txt").read_text()


def test_unknown_subcommand_exits_with_usage():
    with pytest.raises(SystemExit) as info:
        main(["dance"])
    assert info.value.code == 2
