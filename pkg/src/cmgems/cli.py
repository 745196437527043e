"""``cmgems`` command line: run, sweep, oracle, gen-profiles.

Exit codes: 0 ok, 1 oracle check failed, 2 config or usage error,
3 infeasible topology, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, Scenario, bundle_path, load_config
from .profiles import ProfileError, synthesize_profiles, write_profiles
from .sim import Fixed, SimReport, run
from .topology import InfeasibleTopology, brute_force_reconfigure, reconfigure, violations
from .triggering import SoA, SoD, TriggerMode

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2, 3, 4

SWEEP_COLUMNS = (
    "value", "market_rounds", "topology_changes", "energy_fed_kwh", "energy_absorbed_kwh",
    "internal_losses_kwh", "total_exchanged_kwh", "storage_bytes",
)


class UsageError(Exception):
    pass


def _scenario(args) -> Scenario:
    path = args.config
    if path is None:
        path = bundle_path("weekday")
    elif not Path(path).exists() and bundle_path(path).exists():
        path = bundle_path(path)
    sc = load_config(path, seed=args.seed, day=args.day)
    if getattr(args, "scenario", None) is not None:
        sc = sc.with_config(scenario=args.scenario)
    return sc


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def summary_table(report: SimReport, scenario: int) -> str:
    rows = [
        ("Energy fed into main grid [kWh]", report.energy_fed_kwh),
        ("Energy absorbed from main grid [kWh]", report.energy_absorbed_kwh),
        ("Internal losses [kWh]", report.internal_losses_kwh),
        ("Total energy exchanged [kWh]", report.total_exchanged_kwh),
    ]
    width = max(len(r[0]) for r in rows)
    lines = [f"{'Scenario':<{width}}  {scenario:>12}"]
    lines += [f"{name:<{width}}  {value:>12.2f}" for name, value in rows]
    lines.append(f"{'Market rounds':<{width}}  {report.market_rounds:>12}")
    lines.append(f"{'Topology changes':<{width}}  {report.topology_changes:>12}")
    return "\n".join(lines)


def cmd_run(args) -> int:
    sc = _scenario(args)
    report = run(sc.config, sc.profiles, sc.graph)
    out = _out_dir(args)
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "trace.csv").write_text(report.trace_csv(), encoding="utf-8")
    print(summary_table(report, sc.config.scenario))
    return EXIT_OK


def _parse_values(text: str | None) -> list[float]:
    if not text:
        raise UsageError("--values needs a comma separated, nonempty list")
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values: not a number list: {text!r}") from None
    if not values or not all(math.isfinite(v) for v in values):
        raise UsageError("--values needs a comma separated, nonempty list of finite numbers")
    return values


def _sweep_config(sc: Scenario, axis: str, value: float):
    cfg = sc.config
    simultaneous = cfg.trigger.simultaneous_update
    if axis == "sod":
        return replace(cfg, trigger=TriggerMode(SoD(value), simultaneous))
    if axis == "soa":
        return replace(cfg, trigger=TriggerMode(SoA(value), simultaneous))
    # delay values are minutes
    return replace(cfg, delay_model=Fixed(value * 60.0))


def sweep(sc: Scenario, axis: str, values) -> list[dict]:
    rows = []
    for v in values:
        try:
            cfg = _sweep_config(sc, axis, v)
        except ValueError as exc:
            raise UsageError(f"--values: {exc}") from None
        r = run(cfg, sc.profiles, sc.graph)
        rows.append({
            "value": v,
            "market_rounds": r.market_rounds,
            "topology_changes": r.topology_changes,
            "energy_fed_kwh": r.energy_fed_kwh,
            "energy_absorbed_kwh": r.energy_absorbed_kwh,
            "internal_losses_kwh": r.internal_losses_kwh,
            "total_exchanged_kwh": r.total_exchanged_kwh,
            "storage_bytes": sum(r.storage_bytes.values()),
        })
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def cmd_sweep(args) -> int:
    values = _parse_values(args.values)
    sc = _scenario(args)
    rows = sweep(sc, args.axis, values)
    out = _out_dir(args)
    path = out / f"sweep_{args.axis}.csv"
    path.write_text(sweep_csv(rows), encoding="utf-8")
    for row in rows:
        print(f"{args.axis}={row['value']:g} rounds={row['market_rounds']} "
              f"fed={row['energy_fed_kwh']:.2f} total={row['total_exchanged_kwh']:.2f}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    sc = _scenario(args)
    graph = sc.graph
    if not graph.is_forest():
        raise ConfigError("links", "oracle needs a forest (the links contain a cycle)")
    if len(graph.switch_ids) > 20:
        raise ConfigError("links", f"oracle handles at most 20 switches, got {len(graph.switch_ids)}")
    horizon = min(args.ticks, sc.config.duration_ticks)
    step = max(getattr(sc.config.trigger.rule, "period_s", 360) // 60, 1)
    ok = True
    print("tick,heuristic_injection_kw,oracle_injection_kw,gap_kw")
    for tick in range(0, horizon, step):
        balances = {c: 0.0 for c in graph.ids}
        for p in sc.profiles:
            balances[p.cluster_id] += float(p.balance[tick])
        g = graph.with_balances(balances)
        try:
            best = brute_force_reconfigure(g)
        except InfeasibleTopology as exc:
            print(f"{tick},infeasible,infeasible,-", file=sys.stdout)
            raise InfeasibleTopology(f"tick {tick}: {exc}") from exc
        try:
            plan = reconfigure(g)
        except InfeasibleTopology:
            print(f"{tick},infeasible,{best.injection!r},-")
            ok = False
            continue
        gap = plan.injection - best.injection
        problems = violations(g, plan)
        if problems or gap < -1e-6:
            ok = False
        print(f"{tick},{plan.injection!r},{best.injection!r},{gap!r}" + (f"  # {'; '.join(problems)}" if problems else ""))
    return EXIT_OK if ok else EXIT_CHECK


def cmd_gen_profiles(args) -> int:
    sc = _scenario(args)
    minutes = sc.config.duration_ticks
    profiles = []
    for cs in sc.clusters:
        if cs.member_count:
            profiles += synthesize_profiles(cs.role, sc.day, cs.member_count, sc.seed,
                                            cluster_id=cs.cluster_id, minutes=minutes)
    out = Path(args.out or "profiles.csv")
    if out.is_dir():
        out = out / "profiles.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_profiles(profiles, out)
    print(f"wrote {len(profiles)} members x {minutes} minutes to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmgems", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="scenario YAML, or a bundled name (weekday, weekend, pair_a, pair_b)")
        p.add_argument("--out", help=out_help)
        p.add_argument("--seed", type=int, help="override sim.seed")
        p.add_argument("--day", choices=("weekday", "weekend"), help="override sim.day")

    p = sub.add_parser("run", help="simulate one scenario")
    common(p, "output directory (default: current)")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3, 4), help="override sim.scenario")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one run per trigger threshold or delay value")
    common(p, "output directory (default: current)")
    p.add_argument("--axis", required=True, choices=("sod", "soa", "delay"),
                   help="sod: kW, soa: kWh, delay: fixed minutes")
    p.add_argument("--values", required=True, help="comma separated list, e.g. 10,30,50")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3, 4), help="override sim.scenario")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="compare the heuristic with exhaustive search per round")
    common(p, "unused")
    p.add_argument("--ticks", type=int, default=60, help="horizon in minutes (default 60)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("gen-profiles", help="write synthetic member profiles as CSV")
    common(p, "CSV path (default: profiles.csv)")
    p.set_defaults(func=cmd_gen_profiles)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ProfileError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleTopology as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
