import copy

import pytest
import yaml

from cmgems.config import ConfigError, bundle_path, load_config, parse_config
from cmgems.profiles import DayKind, write_profiles
from cmgems.sim import Fixed, Normal
from cmgems.triggering import Periodic, SoA, SoD


@pytest.fixture
def data():
    return yaml.safe_load(bundle_path("pair_a").read_text())


def test_bundles_load():
    for name in ("weekday", "weekend", "pair_a", "pair_b"):
        sc = load_config(bundle_path(name))
        assert sc.source == bundle_path(name)
        assert len(sc.profiles) >= 2
    wd = load_config(bundle_path("weekday"))
    assert wd.graph.cluster("2").pcc is None
    assert wd.config.trigger.rule == Periodic(360)
    assert wd.config.delay_model == Normal(120, 60, 7)
    assert wd.day is DayKind.WEEKDAY and wd.seed == 42
    assert len(wd.profiles) == 114


def test_overrides(data):
    sc = parse_config(data, seed=9, day="weekend")
    assert sc.seed == 9 and sc.day is DayKind.WEEKEND
    assert sc.with_config(scenario=2).config.scenario == 2


@pytest.mark.parametrize("mutate, where", [
    (lambda d: d.pop("tariff"), "[tariff]"),
    (lambda d: d["clusters"][0].update(role="shipyard"), "[clusters[0].role]"),
    (lambda d: d["clusters"][0].update(member_count=-1), "member_count"),
    (lambda d: d["clusters"][0]["pcc"].update(capacity_kw=0), "capacity_kw"),
    (lambda d: d["clusters"][1].update(id="A"), "duplicate"),
    (lambda d: d["links"][0].update(b="Z"), "[links[0].b]"),
    (lambda d: d["links"][0].update(capacity_kw="lots"), "expected a number"),
    (lambda d: d["tariff"].update(purchase=0.01), "[tariff]"),
    (lambda d: d["trigger"].update(mode="sometimes"), "[trigger.mode]"),
    (lambda d: d["trigger"].update(period_s=0), "[trigger]"),
    (lambda d: d["delay"].update(model="gamma"), "[delay.model]"),
    (lambda d: d["delay"].update(seconds=-5), "[delay]"),
    (lambda d: d["sim"].update(scenario=7), "[sim]"),
    (lambda d: d["sim"].update(day="holiday"), "[sim.day]"),
    (lambda d: d["sim"].update(duration_ticks=True), "expected an integer"),
    (lambda d: d["profiles"].update(source="guess"), "[profiles.source]"),
    (lambda d: d["profiles"]["balance_kw"].update(Q=1), "unknown cluster"),
    (lambda d: d.update(prices={"bakery": {"buy": 1, "sell": 0}}), "[prices]"),
])
def test_errors_name_the_field(data, mutate, where):
    bad = copy.deepcopy(data)
    mutate(bad)
    with pytest.raises(ConfigError) as info:
        parse_config(bad)
    assert where in str(info.value)


def test_top_level_must_be_mapping():
    with pytest.raises(ConfigError):
        parse_config([1, 2])


def test_trigger_and_delay_modes(data):
    d = copy.deepcopy(data)
    d["trigger"] = {"mode": "sod", "delta_kw": 30}
    assert parse_config(d).config.trigger.rule == SoD(30.0)
    d["trigger"] = {"mode": "soa", "delta_kwh": 2.5, "simultaneous_update": False}
    cfg = parse_config(d).config
    assert cfg.trigger.rule == SoA(2.5) and cfg.trigger.simultaneous_update is False
    assert cfg.delay_model == Fixed(0.0)


def test_line_overrides(data):
    d = copy.deepcopy(data)
    d["links"][0]["line"] = {"length_m": 250}
    assert parse_config(d).graph.links[0].line.length == 250.0
    d["links"][0]["line"] = {"length_m": -1}
    with pytest.raises(ConfigError, match="line"):
        parse_config(d)


def test_csv_profiles_relative_to_config(tmp_path, data):
    sc = parse_config(data)
    write_profiles(sc.profiles, tmp_path / "members.csv")
    d = copy.deepcopy(data)
    d["profiles"] = {"source": "csv", "path": "members.csv"}
    (tmp_path / "scenario.yaml").write_text(yaml.safe_dump(d))
    loaded = load_config(tmp_path / "scenario.yaml")
    assert loaded.profiles == sc.profiles


def test_yaml_syntax_error(tmp_path):
    p = tmp_path / "broken.yaml"
    p.write_text("clusters: [\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.yaml")
