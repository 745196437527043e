"""Scenario configuration files (YAML) and assembly of graph, profiles and SimConfig."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .flow import DEFAULT_LINE, LineParams
from .market import GridTariff
from .profiles import DayKind, MemberProfile, Role, load_profiles, synthesize_profiles
from .sim import DEFAULT_PRICES, Fixed, Normal, SimConfig
from .topology import Cluster, GridGraph, Link, Pcc
from .triggering import Periodic, SoA, SoD, TriggerMode

REQUIRED_SECTIONS = ("clusters", "links", "tariff", "trigger", "delay", "ledger", "sim", "profiles")


class ConfigError(ValueError):
    def __init__(self, section: str, message: str, field: str | None = None):
        self.section = section
        self.field = field
        where = f"{section}.{field}" if field else section
        super().__init__(f"[{where}] {message}")


@dataclass(frozen=True)
class ClusterSpec:
    cluster_id: str
    role: Role
    member_count: int
    pcc: Pcc | None


@dataclass(frozen=True)
class Scenario:
    config: SimConfig
    graph: GridGraph
    profiles: tuple[MemberProfile, ...]
    clusters: tuple[ClusterSpec, ...]
    seed: int
    day: DayKind
    source: Path | None = None

    def with_config(self, **changes) -> "Scenario":
        return replace(self, config=replace(self.config, **changes))


def bundle_path(name: str) -> Path:
    """Path of a configuration shipped with the package (``weekday``, ``weekend``, ...)."""
    ref = resources.files("cmgems") / "bundle" / f"{name}.yaml"
    return Path(str(ref))


def _get(section: str, data: dict, key: str, kind=None, default: Any = ...):
    if not isinstance(data, dict):
        raise ConfigError(section, "must be a mapping")
    if key not in data:
        if default is ...:
            raise ConfigError(section, "missing field", key)
        return default
    value = data[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(section, f"expected a number, got {value!r}", key)
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(section, f"expected an integer, got {value!r}", key)
        return value
    if kind is str:
        return str(value)
    return value


def _line(section: str, data: dict | None) -> LineParams:
    if data is None:
        return DEFAULT_LINE
    try:
        return LineParams(
            _get(section, data, "resistivity_ohm_m", float, DEFAULT_LINE.resistivity),
            _get(section, data, "cross_section_m2", float, DEFAULT_LINE.cross_section),
            _get(section, data, "length_m", float, DEFAULT_LINE.length),
            _get(section, data, "voltage_v", float, DEFAULT_LINE.nominal_voltage),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(section, str(exc), "line") from None


def parse_config(data: Any, base_dir: Path | None = None, *, seed: int | None = None,
                 day: str | None = None) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    for name in REQUIRED_SECTIONS:
        if name not in data:
            raise ConfigError(name, "missing section")

    # clusters
    specs = []
    if not isinstance(data["clusters"], list) or not data["clusters"]:
        raise ConfigError("clusters", "must be a nonempty list")
    for k, raw in enumerate(data["clusters"]):
        sec = f"clusters[{k}]"
        cid = _get(sec, raw, "id", str)
        try:
            role = Role(_get(sec, raw, "role", str))
        except ValueError:
            raise ConfigError(sec, f"unknown role {raw.get('role')!r}; expected one of "
                              f"{[r.value for r in Role]}", "role") from None
        count = _get(sec, raw, "member_count", int, 0)
        if count < 0:
            raise ConfigError(sec, "must be >= 0", "member_count")
        pcc_raw = raw.get("pcc")
        pcc = None
        if pcc_raw not in (None, "none"):
            cap = _get(sec + ".pcc", pcc_raw, "capacity_kw", float)
            if cap <= 0:
                raise ConfigError(sec + ".pcc", "must be > 0", "capacity_kw")
            pcc = Pcc(cap, _get(sec + ".pcc", pcc_raw, "switch", str), _line(sec + ".pcc.line", pcc_raw.get("line")))
        specs.append(ClusterSpec(cid, role, count, pcc))
    ids = [s.cluster_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError("clusters", "duplicate cluster id")

    links = []
    if not isinstance(data["links"], list):
        raise ConfigError("links", "must be a list")
    for k, raw in enumerate(data["links"]):
        sec = f"links[{k}]"
        a, b = _get(sec, raw, "a", str), _get(sec, raw, "b", str)
        for end, name in ((a, "a"), (b, "b")):
            if end not in ids:
                raise ConfigError(sec, f"unknown cluster {end!r}", name)
        cap = _get(sec, raw, "capacity_kw", float)
        try:
            links.append(Link(a, b, cap, _get(sec, raw, "switch", str), _line(sec + ".line", raw.get("line"))))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(sec, str(exc)) from None

    t = data["tariff"]
    try:
        tariff = GridTariff(_get("tariff", t, "purchase", float), _get("tariff", t, "feedin", float))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("tariff", str(exc)) from None

    tr = data["trigger"]
    mode = _get("trigger", tr, "mode", str)
    simultaneous = bool(_get("trigger", tr, "simultaneous_update", default=True))
    try:
        if mode == "periodic":
            rule = Periodic(_get("trigger", tr, "period_s", int))
        elif mode == "sod":
            rule = SoD(_get("trigger", tr, "delta_kw", float))
        elif mode == "soa":
            rule = SoA(_get("trigger", tr, "delta_kwh", float))
        else:
            raise ConfigError("trigger", f"unknown mode {mode!r}; expected periodic, sod or soa", "mode")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("trigger", str(exc)) from None

    d = data["delay"]
    model = _get("delay", d, "model", str)
    try:
        if model == "fixed":
            delay = Fixed(_get("delay", d, "seconds", float))
        elif model == "normal":
            delay = Normal(_get("delay", d, "mean_s", float), _get("delay", d, "std_s", float),
                           _get("delay", d, "seed", int, 0))
        else:
            raise ConfigError("delay", f"unknown model {model!r}; expected fixed or normal", "model")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("delay", str(exc)) from None

    led = data["ledger"]
    max_tx = _get("ledger", led, "max_block_tx", int, 10)
    window = _get("ledger", led, "block_window_ms", int, 1000)
    idle = _get("ledger", led, "idle_timeout_minutes", int, 60)

    s = data["sim"]
    scenario = _get("sim", s, "scenario", int, 4)
    duration = _get("sim", s, "duration_ticks", int, 1440)
    run_seed = seed if seed is not None else _get("sim", s, "seed", int, 0)
    day_kind = day if day is not None else _get("sim", s, "day", str, "weekday")
    try:
        day_kind = DayKind(day_kind)
    except ValueError:
        raise ConfigError("sim", f"unknown day {day_kind!r}", "day") from None

    prices = dict(DEFAULT_PRICES)
    for role_name, p in (data.get("prices") or {}).items():
        if role_name not in prices:
            raise ConfigError("prices", f"unknown role {role_name!r}")
        prices[role_name] = (_get("prices", p, "buy", float), _get("prices", p, "sell", float))

    try:
        config = SimConfig(
            scenario=scenario,
            trigger=TriggerMode(rule, simultaneous),
            delay_model=delay,
            duration_ticks=duration,
            tariff=tariff,
            idle_timeout_minutes=idle,
            cluster_roles={sp.cluster_id: sp.role.value for sp in specs},
            prices=prices,
            max_block_tx=max_tx,
            block_window_ms=window,
        )
    except ValueError as exc:
        raise ConfigError("sim", str(exc)) from None

    profiles = _profiles(data["profiles"], specs, day_kind, run_seed, duration, base_dir)
    try:
        graph = GridGraph(tuple(Cluster(sp.cluster_id, 0.0, sp.pcc) for sp in specs), tuple(links))
    except ValueError as exc:
        raise ConfigError("links", str(exc)) from None
    return Scenario(config, graph, tuple(profiles), tuple(specs), run_seed, day_kind)


def _profiles(p: Any, specs, day: DayKind, seed: int, duration: int, base_dir: Path | None):
    source = _get("profiles", p, "source", str)
    if source == "synthesize":
        out = []
        for sp in specs:
            if sp.member_count:
                out += synthesize_profiles(sp.role, day, sp.member_count, seed,
                                           cluster_id=sp.cluster_id, minutes=max(duration, 1))
        return out
    if source == "csv":
        path = Path(_get("profiles", p, "path", str))
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        return load_profiles(path)
    if source == "static":
        balances = _get("profiles", p, "balance_kw")
        if not isinstance(balances, dict):
            raise ConfigError("profiles", "must map cluster id to kW", "balance_kw")
        known = {sp.cluster_id for sp in specs}
        out = []
        for key in balances:
            cid = str(key)
            if cid not in known:
                raise ConfigError("profiles", f"unknown cluster {cid!r}", "balance_kw")
            kw = _get("profiles", balances, key, float)
            demand = [max(-kw, 0.0)] * duration
            pv = [max(kw, 0.0)] * duration
            out.append(MemberProfile(f"C{cid}M001", cid, demand, pv))
        return out
    raise ConfigError("profiles", f"unknown source {source!r}; expected synthesize, csv or static", "source")


def load_config(path: str | Path, *, seed: int | None = None, day: str | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"YAML parse error: {exc}") from None
    scenario = parse_config(data, path.parent, seed=seed, day=day)
    return replace(scenario, source=path)
