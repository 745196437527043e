"""Minute-by-minute simulation of the two-layer energy management loop.

Per tick: evaluate triggers; on a round run the cluster markets, the community
market and (scenario 4) reconfiguration; apply any plan whose actuation delay
has elapsed; settle the minute against the plan in force; record to the ledger.

Scenarios:
    1  no markets, no links; every member settles with the grid on its own.
    2  cluster markets only; static groups (PCC-less clusters ride on the
       neighbour with the largest PCC), each group settles at its PCC.
    3  both market layers; all links closed, community trades are scheduled
       along shortest paths within link capacity; deviations stay in the
       static groups.
    4  full pipeline: the reconfiguration plan defines groups and flows.
"""
from __future__ import annotations

import contextlib
import hashlib
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import ledger as lg
from .flow import line_losses
from .market import GridTariff, Offer, Side, cluster_market, cmg_market, residual_curves
from .profiles import MemberProfile
from .switchnet import (
    Endpoint,
    EndpointRegistry,
    LoopbackClient,
    SwitchnetClient,
    energy_path,
    power_path,
    serve,
)
from .topology import (
    GridGraph,
    InfeasibleTopology,
    Link,
    ReconfigPlan,
    SwitchState,
    cluster_key,
    diff_switch_commands,
    reconfigure,
    tree_flows,
)
from .triggering import Periodic, TriggerMode, TriggerState, commit_all, evaluate

TICK_MS = 60_000
# millisecond offsets of each function's transactions inside a round
TX_OFFSETS = {
    lg.TxKind.IUB: 0,
    lg.TxKind.CEM: 100,
    lg.TxKind.ICB: 200,
    lg.TxKind.CMGEM: 300,
    lg.TxKind.NR: 400,
    lg.TxKind.RUM: 500,
    lg.TxKind.RCM: 600,
}


# -- delay models -------------------------------------------------------------------


@dataclass(frozen=True)
class Fixed:
    seconds: float

    def __post_init__(self):
        if self.seconds < 0:
            raise ValueError("delay must be >= 0")


@dataclass(frozen=True)
class Normal:
    mean_s: float
    std_s: float
    seed: int = 0

    def __post_init__(self):
        if self.mean_s < 0 or self.std_s < 0:
            raise ValueError("delay mean and std must be >= 0")


def delay_sample(model: Fixed | Normal, round_index: int) -> float:
    if isinstance(model, Fixed):
        return float(model.seconds)
    if model.std_s == 0:
        return float(model.mean_s)
    rng = np.random.default_rng([model.seed, round_index])
    return max(0.0, float(rng.normal(model.mean_s, model.std_s)))


def delay_ticks(seconds: float) -> int:
    return math.ceil(seconds / 60.0 - 1e-12)


# -- configuration and report -----------------------------------------------------

DEFAULT_PRICES = {
    # role: (buy price, sell price) per kWh, inside the tariff band
    "industrial": (0.20, 0.08),
    "commercial": (0.22, 0.07),
    "campus": (0.18, 0.09),
    "single_residential": (0.21, 0.06),
    "multi_residential": (0.19, 0.10),
}
FALLBACK_PRICE = (0.20, 0.08)


@dataclass(frozen=True)
class SimConfig:
    scenario: int = 4
    trigger: TriggerMode = TriggerMode(Periodic(360))
    delay_model: Fixed | Normal = Fixed(0)
    duration_ticks: int = 1440
    tariff: GridTariff = GridTariff(0.25, 0.05)
    idle_timeout_minutes: int = 60
    cluster_roles: Mapping[str, str] = field(default_factory=dict)
    prices: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_PRICES))
    max_block_tx: int = lg.MAX_BLOCK_TX
    block_window_ms: int = lg.BLOCK_WINDOW_MS

    def __post_init__(self):
        if self.scenario not in (1, 2, 3, 4):
            raise ValueError(f"scenario must be 1..4, got {self.scenario}")
        if self.duration_ticks < 1:
            raise ValueError("duration_ticks must be >= 1")
        if self.idle_timeout_minutes < 1:
            raise ValueError("idle_timeout_minutes must be >= 1")


class SimInfeasible(InfeasibleTopology):
    def __init__(self, tick: int, cause: InfeasibleTopology):
        self.tick = tick
        super().__init__(f"tick {tick}: no feasible topology", cause.clusters)


@dataclass(frozen=True)
class SimReport:
    energy_fed_kwh: float
    energy_absorbed_kwh: float
    internal_losses_kwh: float
    total_exchanged_kwh: float
    market_rounds: int
    topology_changes: int
    oper_commands: int
    storage_bytes: Mapping[str, int]
    trace: tuple[tuple, ...] = field(repr=False, default=())
    ledger_verified: bool = True

    def summary_lines(self) -> list[str]:
        return [
            f"energy_fed_kwh={self.energy_fed_kwh!r}",
            f"energy_absorbed_kwh={self.energy_absorbed_kwh!r}",
            f"internal_losses_kwh={self.internal_losses_kwh!r}",
            f"total_exchanged_kwh={self.total_exchanged_kwh!r}",
            f"market_rounds={self.market_rounds}",
            f"topology_changes={self.topology_changes}",
            f"oper_commands={self.oper_commands}",
            f"ledger_verified={self.ledger_verified}",
            *(f"storage_bytes.{k}={v}" for k, v in self.storage_bytes.items()),
            f"storage_bytes.total={sum(self.storage_bytes.values())}",
        ]

    def to_text(self) -> str:
        return "".join(line + "\n" for line in self.summary_lines())

    def trace_csv(self) -> str:
        out = io.StringIO()
        out.write("tick,cluster,balance_kw,pcc_flow_kw\n")
        for tick, cid, bal, pcc in self.trace:
            out.write(f"{tick},{cid},{bal!r},{pcc!r}\n")
        return out.getvalue()


# -- settlement -------------------------------------------------------------------


@dataclass(frozen=True)
class Settlement:
    fed_kwh: float
    absorbed_kwh: float
    losses_kwh: float
    link_flows: Mapping[str, float]
    pcc_flows: Mapping[str, float]


def slack_cluster(plan: ReconfigPlan, group: Iterable[str], graph: GridGraph) -> str:
    """Closed PCC in the group with the largest planned draw; ties go to the lowest id."""
    closed = [
        c for c in group
        if graph.cluster(c).pcc is not None
        and plan.switch_commands.get(graph.cluster(c).pcc.switch_id) is SwitchState.CLOSED
    ]
    if not closed:
        raise InfeasibleTopology("group without a closed PCC", group)
    return min(closed, key=lambda c: (plan.pcc_flows.get(c, 0.0), cluster_key(c)))


def implied_balances(plan: ReconfigPlan, graph: GridGraph) -> dict[str, float]:
    net = {c: [plan.pcc_flows.get(c, 0.0)] for c in graph.ids}
    for l in graph.links:
        f = plan.link_flows.get(l.switch_id, 0.0)
        net[l.a].append(f)
        net[l.b].append(-f)
    return {c: math.fsum(v) for c, v in net.items()}


def settle_interval(
    plan: ReconfigPlan,
    balances: Mapping[str, float],
    graph: GridGraph,
    duration_s: float = 60.0,
) -> Settlement:
    """Hold ``plan`` for one interval against actual cluster ``balances`` (kW).

    Each cluster's deviation from the plan travels over the group's closed
    links to the group's slack PCC; every other PCC keeps its planned flow.
    """
    implied = implied_balances(plan, graph)
    links = {l.switch_id: l for l in graph.links}
    link_flows = {s: plan.link_flows.get(s, 0.0) for s in links}
    pcc_flows = {c: plan.pcc_flows.get(c, 0.0) for c in graph.ids if graph.cluster(c).pcc}
    for group in plan.groups:
        internal = [
            l for l in graph.links
            if l.a in group and l.b in group
            and plan.switch_commands.get(l.switch_id) is SwitchState.CLOSED
        ]
        dev = {c: balances[c] - implied[c] for c in group}
        if not any(dev.values()):
            continue
        slack = slack_cluster(plan, group, graph)
        routed = _route_to(slack, group, internal, dev)
        for sid, f in routed.items():
            link_flows[sid] += f
        pcc_flows[slack] += math.fsum(dev.values())
    fed = math.fsum(max(f, 0.0) for f in pcc_flows.values()) * duration_s / 3600.0
    absorbed = math.fsum(max(-f, 0.0) for f in pcc_flows.values()) * duration_s / 3600.0
    losses = [line_losses(links[s].line, f, duration_s) for s, f in link_flows.items() if f]
    losses += [line_losses(graph.cluster(c).pcc.line, f, duration_s) for c, f in pcc_flows.items() if f]
    return Settlement(fed, absorbed, math.fsum(losses), link_flows, pcc_flows)


def _route_to(root: str, group: Iterable[str], links: Sequence[Link], dev: Mapping[str, float]) -> dict[str, float]:
    """Flows carrying each cluster's deviation to ``root`` over a BFS spanning tree."""
    adj: dict[str, list[Link]] = {c: [] for c in group}
    for l in links:
        adj[l.a].append(l)
        adj[l.b].append(l)
    parent: dict[str, Link | None] = {root: None}
    order = [root]
    for c in order:
        for l in sorted(adj[c], key=lambda l: l.switch_id):
            o = l.other(c)
            if o not in parent:
                parent[o] = l
                order.append(o)
    missing = set(group) - set(parent)
    if missing:
        raise InfeasibleTopology("cluster cut off from its group's PCC", missing)
    acc = {c: dev[c] for c in order}
    flows = {}
    for c in reversed(order[1:]):
        l = parent[c]
        flows[l.switch_id] = acc[c] if l.a == c else -acc[c]
        acc[l.other(c)] += acc[c]
    return flows


# -- static plans for scenarios 2 and 3 -----------------------------------------------


def static_groups(graph: GridGraph) -> tuple[list[frozenset], list[Link]]:
    """Attach each PCC-less cluster to its neighbour with the largest PCC capacity."""
    attach = []
    hosts = {c: c for c in graph.ids}
    for cid in graph.ids:
        if graph.cluster(cid).pcc is not None:
            continue
        options = []
        for l in graph.links:
            if cid in (l.a, l.b):
                o = l.other(cid)
                pcc = graph.cluster(o).pcc
                if pcc is not None:
                    options.append((-pcc.capacity, cluster_key(o), l.switch_id, l))
        if not options:
            raise InfeasibleTopology("cluster without PCC has no neighbour with a PCC", [cid])
        options.sort(key=lambda o: o[:3])
        attach.append(options[0][3])
        hosts[cid] = options[0][3].other(cid)
    groups: dict[str, set] = {}
    for cid, host in hosts.items():
        groups.setdefault(host, set()).add(cid)
    ordered = sorted((frozenset(g) for g in groups.values()), key=lambda g: min(cluster_key(c) for c in g))
    return ordered, attach


def static_plan(graph: GridGraph, all_links_closed: bool = False) -> ReconfigPlan:
    groups, attach = static_groups(graph)
    commands = {}
    for c in graph.clusters:
        if c.pcc:
            commands[c.pcc.switch_id] = SwitchState.CLOSED
    attached = {l.switch_id for l in attach}
    for l in graph.links:
        on = all_links_closed or l.switch_id in attached
        commands[l.switch_id] = SwitchState.CLOSED if on else SwitchState.OPEN
    return ReconfigPlan(
        switch_commands=dict(sorted(commands.items())),
        link_flows={l.switch_id: 0.0 for l in graph.links if commands[l.switch_id] is SwitchState.CLOSED},
        pcc_flows={c.cluster_id: 0.0 for c in graph.clusters if c.pcc},
        groups=tuple(groups),
    )


def _bfs_path(graph: GridGraph, src: str, dst: str) -> list[tuple[Link, int]]:
    """Shortest link path src -> dst as (link, direction) with +1 meaning a->b."""
    prev: dict[str, tuple[str, Link] | None] = {src: None}
    queue = deque([src])
    adj: dict[str, list[Link]] = {c: [] for c in graph.ids}
    for l in graph.links:
        adj[l.a].append(l)
        adj[l.b].append(l)
    while queue:
        c = queue.popleft()
        if c == dst:
            break
        for l in sorted(adj[c], key=lambda l: l.switch_id):
            o = l.other(c)
            if o not in prev:
                prev[o] = (c, l)
                queue.append(o)
    if dst not in prev:
        return []
    path = []
    c = dst
    while prev[c] is not None:
        p, l = prev[c]
        path.append((l, 1 if l.a == p else -1))
        c = p
    return path[::-1]


def scheduled_plan(graph: GridGraph, base: ReconfigPlan, trades, forecast: Mapping[str, float]) -> ReconfigPlan:
    """Scenario-3 plan: community trades routed on shortest paths within capacity,
    remainders settled inside the static groups."""
    flows = {l.switch_id: 0.0 for l in graph.links}
    caps = {l.switch_id: l.capacity for l in graph.links}
    export = {c: 0.0 for c in graph.ids}
    for t in trades:
        path = _bfs_path(graph, t.seller_id, t.buyer_id)
        if not path:
            continue
        room = min(caps[l.switch_id] - d * flows[l.switch_id] for l, d in path)
        kw = min(t.quantity * 60.0, max(room, 0.0))
        if kw <= 0:
            continue
        for l, d in path:
            flows[l.switch_id] += d * kw
        export[t.seller_id] += kw
        export[t.buyer_id] -= kw
    remainder = {c: forecast[c] - export[c] for c in graph.ids}
    pcc_flows = {c.cluster_id: 0.0 for c in graph.clusters if c.pcc}
    for group in base.groups:
        slack = slack_cluster(base, group, graph)
        internal = [l for l in graph.links if l.a in group and l.b in group]
        total = math.fsum(remainder[c] for c in group)
        pcc_flows[slack] = total
        for sid, f in tree_flows(group, internal, remainder, {slack: total}).items():
            flows[sid] += f
    return ReconfigPlan(base.switch_commands, flows, pcc_flows, base.groups)


# -- field devices --------------------------------------------------------------------


def pcc_meter_id(cluster_id: str) -> str:
    return f"PCC{cluster_id}"


class FieldDevices:
    """One simulated endpoint per cluster hosting its member meters, its PCC meter
    and the switches at its PCC and on links it originates."""

    def __init__(self, graph: GridGraph, profiles: Sequence[MemberProfile]):
        by_cluster: dict[str, list[str]] = {c: [] for c in graph.ids}
        for p in profiles:
            by_cluster[p.cluster_id].append(p.member_id)
        self.endpoints: dict[str, Endpoint] = {}
        self.location: dict[str, str] = {}  # object id -> cluster endpoint
        for c in graph.ids:
            cluster = graph.cluster(c)
            switches = [cluster.pcc.switch_id] if cluster.pcc else []
            switches += [l.switch_id for l in graph.links if l.a == c]
            meters = sorted(by_cluster[c]) + ([pcc_meter_id(c)] if cluster.pcc else [])
            self.endpoints[c] = Endpoint(meters=meters, switches=switches)
            for oid in meters + switches:
                self.location[oid] = c
        self.client = LoopbackClient({oid: self.endpoints[c] for oid, c in self.location.items()})

    def endpoint_for(self, object_id: str) -> Endpoint:
        return self.endpoints[self.location[object_id]]

    @property
    def oper_count(self) -> int:
        return sum(ep.oper_count for ep in self.endpoints.values())

    def switch_positions(self) -> dict[str, bool]:
        out = {}
        for ep in self.endpoints.values():
            out.update(ep.switches)
        return out


@contextlib.contextmanager
def live_field(graph: GridGraph, profiles: Sequence[MemberProfile], host: str = "127.0.0.1",
               timeout_ms: int = 2000) -> Iterator[FieldDevices]:
    """Field devices served over TCP on ephemeral ports, with a wire client."""
    devices = FieldDevices(graph, profiles)
    handles = {c: serve(ep, (host, 0)) for c, ep in devices.endpoints.items()}
    registry = EndpointRegistry()
    for oid, c in sorted(devices.location.items()):
        h, port = handles[c].address
        kind = "meter" if oid in devices.endpoints[c].meters else "switch"
        registry.add(oid, h, port, kind)
    client = SwitchnetClient(registry, timeout_ms)
    devices.client = client
    devices.registry = registry
    try:
        yield devices
    finally:
        client.close()
        for h in handles.values():
            h.close()


# -- the loop ---------------------------------------------------------------------


def _digest(obj) -> str:
    return hashlib.sha256(lg.canonical_payload(obj)).hexdigest()


class _Run:
    def __init__(self, config: SimConfig, profiles: Sequence[MemberProfile], graph: GridGraph,
                 devices: FieldDevices | None):
        self.cfg = config
        self.graph = graph
        self.ids = graph.ids
        n = config.duration_ticks
        self.profiles = sorted(profiles, key=lambda p: (cluster_key(p.cluster_id), p.member_id))
        for p in self.profiles:
            if len(p) < n:
                raise ValueError(f"profile {p.member_id} covers {len(p)} ticks, need {n}")
            if p.cluster_id not in self.ids:
                raise ValueError(f"profile {p.member_id} belongs to unknown cluster {p.cluster_id}")
        self.members = [p.member_id for p in self.profiles]
        self._row = {m: i for i, m in enumerate(self.members)}
        self.member_cluster = {p.member_id: p.cluster_id for p in self.profiles}
        self.by_cluster = {c: [m for m in self.members if self.member_cluster[m] == c] for c in self.ids}
        self.power = np.stack([p.balance[:n] for p in self.profiles]) if self.profiles else np.zeros((0, n))
        self.energy = np.cumsum(self.power / 60.0, axis=1)
        rows = {c: [i for i, m in enumerate(self.members) if self.member_cluster[m] == c] for c in self.ids}
        self.cluster_power = {c: self.power[rows[c]].sum(axis=0) for c in self.ids}
        self.devices = devices if devices is not None else FieldDevices(graph, self.profiles)
        self.ledger = lg.TwoTierLedger(self.ids, config.max_block_tx, config.block_window_ms)
        self.pcc_energy = {c: 0.0 for c in self.ids}
        self.pcc_power = {c: 0.0 for c in self.ids}

    # ledger helpers
    def _tx(self, chain: str, kind: lg.TxKind, actor: str, payload: dict, tick: int) -> None:
        ts = tick * TICK_MS + TX_OFFSETS[kind]
        lg.append_tx(self.ledger, chain, lg.Transaction.make(kind, actor, payload, ts))

    def _price(self, cluster_id: str, side: Side) -> float:
        role = self.cfg.cluster_roles.get(cluster_id)
        buy, sell = self.cfg.prices.get(role, FALLBACK_PRICE) if role else FALLBACK_PRICE
        return buy if side is Side.BUY else sell

    def _read_meters(self, cluster_id: str, tick: int) -> list:
        ids = self.by_cluster[cluster_id]
        ep = self.devices.endpoints[cluster_id]
        for m in ids:
            i = self._row[m]
            ep.set_meter(m, float(self.power[i, tick]), float(self.energy[i, tick]))
        if not ids:
            return []
        paths = []
        for m in ids:
            paths += [power_path(m), energy_path(m)]
        values = self.devices.client.read_many(ids[0], paths)
        return [[m, values[2 * k], values[2 * k + 1]] for k, m in enumerate(ids)]

    def _read_pcc(self, tick: int) -> list:
        out = []
        for c in self.ids:
            if self.graph.cluster(c).pcc is None:
                continue
            mid = pcc_meter_id(c)
            self.devices.endpoints[c].set_meter(mid, self.pcc_power[c], self.pcc_energy[c])
            p, e = self.devices.client.read_many(mid, [power_path(mid), energy_path(mid)])
            out.append([c, p, e])
        return out

    def _record_meters(self, tick: int, community: bool) -> None:
        for c in self.ids:
            self._tx(c, lg.TxKind.RUM, c, {"cluster": c, "tick": tick, "readings": self._read_meters(c, tick)}, tick)
        if community:
            self._tx(lg.COMMUNITY, lg.TxKind.RCM, "cmg", {"tick": tick, "pcc": self._read_pcc(tick)}, tick)

    # one market round
    def _round(self, tick: int, refs: Mapping[str, float], base_plan: ReconfigPlan | None) -> ReconfigPlan | None:
        cfg = self.cfg
        icb_offers = []
        for c in self.ids:
            bids = []
            for m in self.by_cluster[c]:
                p = refs[m]
                side = Side.SELL if p > 0 else Side.BUY
                qty = abs(p) / 60.0
                payload = {"member": m, "tick": tick, "side": side.value if p else "none", "kwh": qty,
                           "price": self._price(c, side)}
                self._tx(c, lg.TxKind.IUB, m, payload, tick)
                if qty > 0:
                    bids.append(Offer(m, side, qty, self._price(c, side)))
            result = cluster_market(bids, cfg.tariff, membership=self.member_cluster)
            residual = residual_curves(result, c)
            self._tx(c, lg.TxKind.CEM, c, {
                "cluster": c, "tick": tick, "matched_kwh": result.matched_volume,
                "price": result.clearing_price, "trades": len(result.trades),
                "residual": [[o.side.value, o.quantity, o.price] for o in residual],
                "digest": _digest([[t.buyer_id, t.seller_id, t.quantity] for t in result.trades]),
            }, tick)
            icb_offers += residual

        if cfg.scenario == 2:
            self._record_meters(tick, community=False)
            return None

        for c in self.ids:
            mine = [[o.side.value, o.quantity, o.price] for o in icb_offers if o.actor_id == c]
            self._tx(lg.COMMUNITY, lg.TxKind.ICB, c, {"cluster": c, "tick": tick, "offers": mine}, tick)
        cmg = cmg_market(icb_offers, cfg.tariff)
        self._tx(lg.COMMUNITY, lg.TxKind.CMGEM, "cmg", {
            "tick": tick, "matched_kwh": cmg.matched_volume, "price": cmg.clearing_price,
            "trades": [[t.buyer_id, t.seller_id, t.quantity] for t in cmg.trades],
            "grid": [[o.actor_id, o.side.value, o.quantity] for o in (*cmg.residual_buys, *cmg.residual_sells)],
        }, tick)

        forecast = {c: math.fsum(refs[m] for m in self.by_cluster[c]) for c in self.ids}
        if cfg.scenario == 3:
            plan = scheduled_plan(self.graph, base_plan, cmg.trades, forecast)
        else:
            try:
                plan = reconfigure(self.graph.with_balances(forecast))
            except InfeasibleTopology as exc:
                raise SimInfeasible(tick, exc) from exc
            self._tx(lg.COMMUNITY, lg.TxKind.NR, "cmg", {
                "tick": tick,
                "closed": list(plan.closed_switches),
                "links": [[s, f] for s, f in plan.link_flows.items()],
                "pcc": [[c, f] for c, f in plan.pcc_flows.items()],
            }, tick)
        self._record_meters(tick, community=True)
        return plan

    def run(self) -> SimReport:
        cfg = self.cfg
        n = cfg.duration_ticks
        scenario = cfg.scenario
        state = TriggerState(self.members, cfg.trigger.simultaneous_update)
        base_plan = None
        if scenario in (2, 3):
            base_plan = static_plan(self.graph, all_links_closed=scenario == 3)

        current: ReconfigPlan | None = None
        current_round = -1
        pending: list[tuple[int, int, ReconfigPlan]] = []
        rounds = 0
        changes = 0
        last_round_tick = 0
        last_record_tick = 0
        fed, absorbed, losses = [], [], []
        trace = []

        for t in range(n):
            self.ledger.advance(t * TICK_MS)
            powers = {m: float(self.power[i, t]) for i, m in enumerate(self.members)}

            # triggering and market round
            plan = None
            round_due = False
            if scenario >= 2:
                if t == 0:
                    commit_all(state, {m: (p, p / 60.0) for m, p in powers.items()}, 0)
                    round_due = True
                else:
                    round_due, _ = evaluate(state, cfg.trigger, powers, t, last_round_tick)
            if round_due:
                refs = {m: state.reference(m).reference_power for m in self.members}
                plan = self._round(t, refs, base_plan)
                if plan is None:
                    plan = base_plan
                idx = rounds
                rounds += 1
                last_round_tick = t
                last_record_tick = t
                apply_at = t if t == 0 else t + delay_ticks(delay_sample(cfg.delay_model, idx))
                pending.append((apply_at, idx, plan))
            elif t - last_record_tick >= cfg.idle_timeout_minutes:
                self._record_meters(t, community=scenario >= 3)
                last_record_tick = t

            # actuation of plans whose delay has elapsed
            due = [p for p in pending if p[0] <= t]
            if due:
                pending = [p for p in pending if p[0] > t]
                _, idx, newest = max(due, key=lambda p: p[1])
                if idx > current_round:
                    diff = diff_switch_commands(current, newest)
                    if diff:
                        changes += 1
                        for sid, st in diff:
                            self.devices.client.operate(sid, st is SwitchState.CLOSED)
                    current, current_round = newest, idx

            # settlement
            if scenario == 1:
                col = self.power[:, t]
                fed.append(float(col[col > 0].sum()) / 60.0)
                absorbed.append(float(-col[col < 0].sum()) / 60.0)
                for c in self.ids:
                    trace.append((t, c, float(self.cluster_power[c][t]), 0.0))
                continue
            balances = {c: float(self.cluster_power[c][t]) for c in self.ids}
            s = settle_interval(current, balances, self.graph)
            fed.append(s.fed_kwh)
            absorbed.append(s.absorbed_kwh)
            losses.append(s.losses_kwh)
            for c in self.ids:
                f = s.pcc_flows.get(c, 0.0)
                self.pcc_power[c] = f
                self.pcc_energy[c] += f / 60.0
                trace.append((t, c, balances[c], f))

        self.ledger.flush()
        report = lg.storage_report(self.ledger)
        e_fed, e_abs = math.fsum(fed), math.fsum(absorbed)
        return SimReport(
            energy_fed_kwh=e_fed,
            energy_absorbed_kwh=e_abs,
            internal_losses_kwh=math.fsum(losses),
            total_exchanged_kwh=e_fed + e_abs,
            market_rounds=rounds,
            topology_changes=changes,
            oper_commands=self.devices.oper_count,
            storage_bytes=dict(report.bytes_per_chain),
            trace=tuple(trace),
            ledger_verified=self.ledger.verify(),
        )


def run(config: SimConfig, profiles: Sequence[MemberProfile], graph: GridGraph,
        devices: FieldDevices | None = None) -> SimReport:
    """Simulate ``config.duration_ticks`` minutes. Pass ``devices`` (e.g. from
    :func:`live_field`) to actuate and read over the wire."""
    return _Run(config, profiles, graph, devices).run()


def run_with_ledger(config: SimConfig, profiles: Sequence[MemberProfile], graph: GridGraph,
                    devices: FieldDevices | None = None) -> tuple[SimReport, lg.TwoTierLedger]:
    r = _Run(config, profiles, graph, devices)
    return r.run(), r.ledger
