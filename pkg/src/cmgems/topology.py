"""Cluster-level grid graph, the three-loop reconfiguration heuristic and an exhaustive oracle.

Sign conventions: a cluster balance is positive for surplus; a PCC flow is
positive when energy is injected into the main grid; a link flow is positive
when it runs from ``link.a`` to ``link.b``. Per cluster,
``balance == sum(outgoing link flows) + pcc_flow``.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .flow import DEFAULT_LINE, LineParams

TOL = 1e-9
MAX_ORACLE_SWITCHES = 20


class SwitchState(str, enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


class InfeasibleTopology(Exception):
    def __init__(self, message: str, clusters: Iterable[str] = ()):
        self.clusters = tuple(sorted(clusters, key=cluster_key))
        super().__init__(f"{message}: clusters {list(self.clusters)}" if self.clusters else message)


def cluster_key(cid) -> tuple:
    """Natural ordering: numeric ids by value, then everything else lexically."""
    s = str(cid)
    return (0, int(s), s) if s.isdigit() else (1, 0, s)


@dataclass(frozen=True)
class Pcc:
    capacity: float
    switch_id: str
    line: LineParams = DEFAULT_LINE

    def __post_init__(self):
        if not self.capacity > 0:
            raise ValueError(f"PCC {self.switch_id}: capacity must be > 0")


@dataclass(frozen=True)
class Cluster:
    cluster_id: str
    balance: float
    pcc: Pcc | None = None


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    capacity: float
    switch_id: str
    line: LineParams = DEFAULT_LINE

    def __post_init__(self):
        if not self.capacity > 0:
            raise ValueError(f"link {self.switch_id}: capacity must be > 0")
        if self.a == self.b:
            raise ValueError(f"link {self.switch_id}: endpoints must differ")

    def other(self, cid: str) -> str:
        return self.b if cid == self.a else self.a


@dataclass(frozen=True)
class GridGraph:
    clusters: tuple[Cluster, ...]
    links: tuple[Link, ...] = ()
    switch_states: Mapping[str, SwitchState] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "links", tuple(self.links))
        ids = [c.cluster_id for c in self.clusters]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate cluster ids")
        known = set(ids)
        pairs = set()
        switches = [c.pcc.switch_id for c in self.clusters if c.pcc]
        for link in self.links:
            if link.a not in known or link.b not in known:
                raise ValueError(f"link {link.switch_id} references an unknown cluster")
            pair = frozenset((link.a, link.b))
            if pair in pairs:
                raise ValueError(f"more than one link between {link.a} and {link.b}")
            pairs.add(pair)
            switches.append(link.switch_id)
        if len(set(switches)) != len(switches):
            raise ValueError("duplicate switch ids")
        if not any(c.pcc for c in self.clusters):
            raise InfeasibleTopology("no cluster has a PCC", ids)

    # lookups -------------------------------------------------------------
    @property
    def ids(self) -> list[str]:
        return sorted((c.cluster_id for c in self.clusters), key=cluster_key)

    def cluster(self, cid: str) -> Cluster:
        for c in self.clusters:
            if c.cluster_id == cid:
                return c
        raise KeyError(cid)

    @property
    def balances(self) -> dict[str, float]:
        return {c.cluster_id: c.balance for c in self.clusters}

    @property
    def switch_ids(self) -> list[str]:
        out = [c.pcc.switch_id for c in self.clusters if c.pcc]
        out += [l.switch_id for l in self.links]
        return sorted(out)

    def link_by_switch(self, sid: str) -> Link:
        for l in self.links:
            if l.switch_id == sid:
                return l
        raise KeyError(sid)

    def with_balances(self, balances: Mapping[str, float]) -> "GridGraph":
        return replace(
            self,
            clusters=tuple(replace(c, balance=float(balances.get(c.cluster_id, 0.0))) for c in self.clusters),
        )

    def is_forest(self) -> bool:
        dsu = _DSU(self.ids)
        for l in self.links:
            if not dsu.union(l.a, l.b):
                return False
        return True


@dataclass(frozen=True)
class ReconfigPlan:
    switch_commands: Mapping[str, SwitchState]
    link_flows: Mapping[str, float]  # keyed by link switch id
    pcc_flows: Mapping[str, float]  # keyed by cluster id
    groups: tuple[frozenset, ...]

    @property
    def injection(self) -> float:
        return math.fsum(max(f, 0.0) for f in self.pcc_flows.values())

    @property
    def absorption(self) -> float:
        return math.fsum(max(-f, 0.0) for f in self.pcc_flows.values())

    @property
    def exchange(self) -> float:
        return self.injection + self.absorption

    @property
    def closed_switches(self) -> tuple[str, ...]:
        return tuple(sorted(s for s, st in self.switch_commands.items() if st is SwitchState.CLOSED))

    def group_of(self, cid: str) -> frozenset:
        for g in self.groups:
            if cid in g:
                return g
        raise KeyError(cid)


# -- helpers ---------------------------------------------------------------


class _DSU:
    def __init__(self, items: Iterable):
        self.parent = {i: i for i in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if cluster_key(rb) < cluster_key(ra):
            ra, rb = rb, ra
        self.parent[rb] = ra
        return True

    def groups(self) -> list[frozenset]:
        out: dict = {}
        for i in self.parent:
            out.setdefault(self.find(i), set()).add(i)
        return sorted((frozenset(g) for g in out.values()), key=lambda g: min(cluster_key(c) for c in g))


def _components(ids: Sequence[str], links: Iterable[Link]) -> list[frozenset]:
    dsu = _DSU(ids)
    for l in links:
        dsu.union(l.a, l.b)
    return dsu.groups()


def tree_flows(
    members: Iterable[str],
    links: Sequence[Link],
    balances: Mapping[str, float],
    pcc_flows: Mapping[str, float],
) -> dict[str, float]:
    """Link flows on a tree component, fixed by per-cluster conservation."""
    members = sorted(members, key=cluster_key)
    adj: dict[str, list[Link]] = {c: [] for c in members}
    for l in links:
        adj[l.a].append(l)
        adj[l.b].append(l)
    root = members[0]
    order, parent_link = [root], {root: None}
    for c in order:
        for l in sorted(adj[c], key=lambda l: l.switch_id):
            o = l.other(c)
            if o not in parent_link:
                parent_link[o] = l
                order.append(o)
    net = {c: balances[c] - pcc_flows.get(c, 0.0) for c in members}
    flows = {}
    for c in reversed(order[1:]):
        l = parent_link[c]
        up = net[c]  # flow from c toward its parent
        flows[l.switch_id] = (up if l.a == c else -up) + 0.0  # no negative zeros
        net[l.other(c)] += up
    return flows


def _clamp(value: float, cap: float) -> float:
    if abs(value) > cap and abs(value) - cap <= TOL * max(1.0, cap):
        return math.copysign(cap, value)
    return value


def _min_injection_lp(
    members: Sequence[str],
    links: Sequence[Link],
    balances: Mapping[str, float],
    pccs: Mapping[str, Pcc],
) -> tuple[float, dict[str, float], dict[str, float]] | None:
    """Minimum-injection flows inside one component, or None if infeasible.

    Variables: one signed flow per link, then injection and draw per PCC.
    """
    members = list(members)
    idx = {c: i for i, c in enumerate(members)}
    pcc_ids = sorted(pccs, key=cluster_key)
    nl, npcc = len(links), len(pcc_ids)
    n = nl + 2 * npcc
    if npcc == 0:
        return None
    a_eq = np.zeros((len(members), n))
    b_eq = np.array([balances[c] for c in members], dtype=float)
    for k, l in enumerate(links):
        a_eq[idx[l.a], k] += 1.0
        a_eq[idx[l.b], k] -= 1.0
    for k, c in enumerate(pcc_ids):
        a_eq[idx[c], nl + k] += 1.0
        a_eq[idx[c], nl + npcc + k] -= 1.0
    bounds = [(-l.capacity, l.capacity) for l in links]
    bounds += [(0.0, pccs[c].capacity) for c in pcc_ids] * 2
    cost = np.zeros(n)
    cost[nl:nl + npcc] = 1.0
    # a small draw cost stops the solver from injecting and drawing at the same PCC
    cost[nl + npcc:] = 1e-9
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    x = res.x
    link_flows = {l.switch_id: _clamp(float(x[k]), l.capacity) for k, l in enumerate(links)}
    pcc_flows = {}
    for k, c in enumerate(pcc_ids):
        f = float(x[nl + k] - x[nl + npcc + k])
        if abs(f) <= TOL:
            f = 0.0
        pcc_flows[c] = _clamp(f, pccs[c].capacity)
    # recompute link flows exactly from conservation on the tree
    link_flows = tree_flows(members, links, balances, pcc_flows) if _is_tree(members, links) else link_flows
    link_flows = {s: _clamp(v, next(l.capacity for l in links if l.switch_id == s)) for s, v in link_flows.items()}
    inj = math.fsum(max(f, 0.0) for f in pcc_flows.values())
    return inj, link_flows, pcc_flows


def _is_tree(members: Sequence[str], links: Sequence[Link]) -> bool:
    return len(links) == len(members) - 1


def _flows_ok(links: Sequence[Link], flows: Mapping[str, float]) -> bool:
    return all(abs(flows[l.switch_id]) <= l.capacity + TOL for l in links)


# -- heuristic ---------------------------------------------------------------


class _Entity:
    __slots__ = ("eid", "members", "balance")

    def __init__(self, eid: str, members: set, balance: float):
        self.eid = eid
        self.members = members
        self.balance = balance


def reconfigure(graph: GridGraph) -> ReconfigPlan:
    """Three-loop heuristic: pair surplus with deficit over links, attach PCC-less
    entities to neighbours, then close PCCs, largest drawer first."""
    ids = graph.ids
    bal = graph.balances
    pccs = {c.cluster_id: c.pcc for c in graph.clusters if c.pcc}
    entity_of = {c: c for c in ids}
    entities = {c: _Entity(c, {c}, bal[c]) for c in ids}
    closed: set[str] = set()
    saturated: set[str] = set()
    comp = _DSU(ids)  # components of the closed-link forest

    def merge(e1: _Entity, e2: _Entity) -> _Entity:
        keep, drop = (e1, e2) if cluster_key(e1.eid) <= cluster_key(e2.eid) else (e2, e1)
        keep.members |= drop.members
        keep.balance = e1.balance + e2.balance
        for c in drop.members:
            entity_of[c] = keep.eid
        del entities[drop.eid]
        return keep

    def close(link: Link):
        closed.add(link.switch_id)
        comp.union(link.a, link.b)

    def eligible(link: Link) -> bool:
        return (
            link.switch_id not in closed
            and link.switch_id not in saturated
            and comp.find(link.a) != comp.find(link.b)
        )

    # loop a: pair surplus entities with linked deficit entities
    while True:
        best = None
        surplus = sorted(
            (e for e in entities.values() if e.balance > TOL),
            key=lambda e: (-e.balance, cluster_key(e.eid)),
        )
        for s in surplus:
            options = []
            for link in graph.links:
                if not eligible(link):
                    continue
                ea, eb = entity_of[link.a], entity_of[link.b]
                if s.eid not in (ea, eb) or ea == eb:
                    continue
                d = entities[eb if ea == s.eid else ea]
                if d.balance < -TOL:
                    options.append((d.balance, cluster_key(d.eid), -link.capacity, link.switch_id, d, link))
            if options:
                options.sort(key=lambda o: o[:4])
                best = (s, options[0][4], options[0][5])
                break
        if best is None:
            break
        s, d, link = best
        if min(s.balance, -d.balance) <= link.capacity:
            close(link)
            merge(s, d)
        else:
            close(link)
            saturated.add(link.switch_id)
            s.balance -= link.capacity
            d.balance += link.capacity

    # loop b: entities without their own PCC ride on a neighbour
    def headroom(e: _Entity) -> float:
        return math.fsum(pccs[c].capacity for c in e.members if c in pccs) - abs(e.balance)

    def component_has_pcc(cid: str) -> bool:
        root = comp.find(cid)
        return any(comp.find(c) == root for c in pccs)

    changed = True
    while changed:
        changed = False
        for eid in sorted(entities, key=cluster_key):
            e = entities.get(eid)
            if e is None or any(c in pccs for c in e.members):
                continue
            if abs(e.balance) <= TOL and component_has_pcc(next(iter(e.members))):
                continue
            options = []
            for link in graph.links:
                if link.switch_id in closed:
                    continue
                ea, eb = entity_of[link.a], entity_of[link.b]
                if e.eid not in (ea, eb) or ea == eb or comp.find(link.a) == comp.find(link.b):
                    continue
                other = entities[eb if ea == e.eid else ea]
                options.append((-headroom(other), cluster_key(other.eid), -link.capacity, link.switch_id, other, link))
            if not options:
                continue
            options.sort(key=lambda o: o[:4])
            _, _, _, _, other, link = options[0]
            close(link)
            merge(e, other)
            changed = True
            break

    # loop c: close PCCs, biggest individual drawer first
    pcc_flows: dict[str, float] = {}
    for eid in sorted(entities, key=cluster_key):
        e = entities[eid]
        own = sorted((c for c in e.members if c in pccs), key=lambda c: (bal[c], cluster_key(c)))
        if abs(e.balance) <= TOL or not own:
            continue
        remaining = abs(e.balance)
        sign = 1.0 if e.balance > 0 else -1.0
        for c in own:
            take = min(pccs[c].capacity, remaining)
            pcc_flows[c] = sign * take
            remaining -= take
            if remaining <= TOL:
                break
    for group in comp.groups():
        if not any(c in pcc_flows for c in group):
            with_pcc = sorted((c for c in group if c in pccs), key=cluster_key)
            if with_pcc:
                pcc_flows[with_pcc[0]] = 0.0

    closed_links = [l for l in graph.links if l.switch_id in closed]
    plan_links, plan_pcc, groups = _settle_flows(graph, closed_links, pcc_flows)
    settled = [l for l in graph.links if l.switch_id in plan_links]
    plan_links, plan_pcc, groups = _tighten(graph, settled, plan_links, plan_pcc)
    return _make_plan(graph, plan_links, plan_pcc, groups)


def _settle_flows(graph: GridGraph, closed_links: list[Link], pcc_flows: dict[str, float]):
    """Derive link flows per component; repair capacity or PCC shortfalls by LP and merging."""
    bal = graph.balances
    pccs = {c.cluster_id: c.pcc for c in graph.clusters if c.pcc}
    closed_links = list(closed_links)
    out_links: dict[str, float] = {}
    out_pcc: dict[str, float] = {}
    pending = _components(graph.ids, closed_links)
    while pending:
        group = pending.pop(0)
        links = [l for l in closed_links if l.a in group]
        flows_pcc = {c: pcc_flows[c] for c in group if c in pcc_flows}
        total = math.fsum(bal[c] for c in group)
        ok = (
            flows_pcc
            and abs(math.fsum(flows_pcc.values()) - total) <= TOL * max(1.0, abs(total))
            and all(abs(f) <= pccs[c].capacity + TOL for c, f in flows_pcc.items())
        )
        if ok:
            flows = tree_flows(group, links, bal, flows_pcc)
            ok = _flows_ok(links, flows)
        if not ok:
            lp = _min_injection_lp(sorted(group, key=cluster_key), links, bal, {c: pccs[c] for c in group if c in pccs})
            if lp is not None:
                _, flows, lp_pcc = lp
                flows_pcc = {c: f for c, f in lp_pcc.items() if f != 0.0}
                if not flows_pcc:
                    flows_pcc = {min(lp_pcc, key=cluster_key): 0.0}
                ok = True
        if not ok:
            joined = _join_neighbour(graph, group, closed_links, pending)
            if joined is None:
                raise InfeasibleTopology("no feasible topology", group)
            closed_links.append(joined[0])
            # the neighbour may already be settled; it is recomputed with the merged group
            pending = [g for g in pending if g != joined[1]]
            pending.insert(0, group | joined[1])
            for c in joined[1]:
                out_pcc.pop(c, None)
            for l in closed_links:
                if l.a in joined[1]:
                    out_links.pop(l.switch_id, None)
            continue
        out_links.update({s: _clamp(v, graph.link_by_switch(s).capacity) for s, v in flows.items()})
        out_pcc.update({c: _clamp(f, pccs[c].capacity) for c, f in flows_pcc.items()})
    return out_links, out_pcc, _components(graph.ids, closed_links)


def _solve_group(graph: GridGraph, group, links):
    pccs = {c.cluster_id: c.pcc for c in graph.clusters if c.pcc and c.cluster_id in group}
    lp = _min_injection_lp(sorted(group, key=cluster_key), links, graph.balances, pccs)
    if lp is None:
        return None
    inj, flows, lp_pcc = lp
    used = {c: f for c, f in lp_pcc.items() if f != 0.0} or {min(lp_pcc, key=cluster_key): 0.0}
    return inj, flows, used


def _tighten(graph: GridGraph, closed_links: list[Link], link_flows: dict, pcc_flows: dict):
    """Close further links while that lowers grid injection.

    Loop a judges pairings on raw balances, so a group that capacity limits turn
    into a net drawer can sit next to an islanded surplus. Closing a link only
    relaxes the component LP, so each accepted step is a strict improvement.
    """
    closed_links = list(closed_links)
    link_flows, pcc_flows = dict(link_flows), dict(pcc_flows)

    def injection(group) -> float:
        return math.fsum(max(pcc_flows.get(c, 0.0), 0.0) for c in group)

    def install(group, links, solved):
        for c in group:
            pcc_flows.pop(c, None)
        for l in links:
            link_flows.pop(l.switch_id, None)
        _, flows, used = solved
        link_flows.update(flows)
        pcc_flows.update(used)

    while True:
        comps = _components(graph.ids, closed_links)
        where = {c: g for g in comps for c in g}
        closed_ids = {l.switch_id for l in closed_links}
        best = None
        for link in sorted(graph.links, key=lambda l: l.switch_id):
            ga, gb = where[link.a], where[link.b]
            if link.switch_id in closed_ids or ga == gb:
                continue
            merged = ga | gb
            links = [l for l in closed_links if l.a in merged] + [link]
            solved = _solve_group(graph, merged, links)
            if solved is None:
                continue
            before = injection(merged)
            gain = before - solved[0]
            if gain > TOL * max(1.0, before) and (best is None or gain > best[0] + TOL):
                best = (gain, link, merged, links, solved)
        if best is not None:
            _, link, merged, links, solved = best
            closed_links.append(link)
            install(merged, links, solved)
            continue
        # no single link helps; a gain may still need several links at once
        current = math.fsum(max(f, 0.0) for f in pcc_flows.values())
        extra = []
        full = 0.0
        for group in _components(graph.ids, graph.links):
            links = [l for l in graph.links if l.a in group]
            solved = _solve_group(graph, group, links)
            if solved is None:
                return link_flows, pcc_flows, comps
            full += solved[0]
            extra += [l for l in links if l.switch_id not in closed_ids and abs(solved[1].get(l.switch_id, 0.0)) > TOL]
        if not extra or current - full <= TOL * max(1.0, current):
            return link_flows, pcc_flows, comps
        closed_links += extra
        for group in _components(graph.ids, closed_links):
            links = [l for l in closed_links if l.a in group]
            solved = _solve_group(graph, group, links)
            if solved is None:
                return link_flows, pcc_flows, comps
            install(group, links, solved)


def _join_neighbour(graph: GridGraph, group: frozenset, closed_links: list[Link], pending: list[frozenset]):
    """Pick the adjacent component with most PCC headroom and the widest link to it."""
    bal = graph.balances
    pccs = {c.cluster_id: c.pcc for c in graph.clusters if c.pcc}
    closed_ids = {l.switch_id for l in closed_links}
    comps = _components(graph.ids, closed_links)
    options = []
    for link in graph.links:
        if link.switch_id in closed_ids:
            continue
        if (link.a in group) == (link.b in group):
            continue
        far = link.b if link.a in group else link.a
        other = next(g for g in comps if far in g)
        room = math.fsum(pccs[c].capacity for c in other if c in pccs) - abs(math.fsum(bal[c] for c in other))
        options.append((-room, min(cluster_key(c) for c in other), -link.capacity, link.switch_id, link, other))
    if not options:
        return None
    options.sort(key=lambda o: o[:4])
    return options[0][4], options[0][5]


def _make_plan(graph: GridGraph, link_flows, pcc_flows, groups) -> ReconfigPlan:
    commands = {}
    for c in graph.clusters:
        if c.pcc:
            commands[c.pcc.switch_id] = SwitchState.CLOSED if c.cluster_id in pcc_flows else SwitchState.OPEN
    for l in graph.links:
        commands[l.switch_id] = SwitchState.CLOSED if l.switch_id in link_flows else SwitchState.OPEN
    full_pcc = {c.cluster_id: float(pcc_flows.get(c.cluster_id, 0.0)) for c in graph.clusters if c.pcc}
    return ReconfigPlan(
        switch_commands=dict(sorted(commands.items())),
        link_flows=dict(sorted(link_flows.items())),
        pcc_flows=full_pcc,
        groups=tuple(groups),
    )


# -- validation ----------------------------------------------------------------


def violations(graph: GridGraph, plan: ReconfigPlan) -> list[str]:
    problems = []
    known = set(graph.switch_ids)
    for sid in plan.switch_commands:
        if sid not in known:
            problems.append(f"unknown switch {sid}")
    state = {s: plan.switch_commands.get(s, SwitchState.OPEN) for s in known}
    closed_links = [l for l in graph.links if state[l.switch_id] is SwitchState.CLOSED]
    closed_pcc = {c.cluster_id for c in graph.clusters if c.pcc and state[c.pcc.switch_id] is SwitchState.CLOSED}

    for group in _components(graph.ids, closed_links):
        if not group & closed_pcc:
            problems.append(f"group {sorted(group, key=cluster_key)} has no closed PCC")
    net = {c: graph.cluster(c).balance for c in graph.ids}
    for l in graph.links:
        f = plan.link_flows.get(l.switch_id, 0.0)
        if state[l.switch_id] is SwitchState.OPEN and f != 0.0:
            problems.append(f"flow on open link {l.switch_id}")
        if abs(f) > l.capacity:
            problems.append(f"link {l.switch_id} flow {f} exceeds {l.capacity}")
        net[l.a] -= f
        net[l.b] += f
    for c in graph.clusters:
        f = plan.pcc_flows.get(c.cluster_id, 0.0)
        if c.pcc is None:
            if f != 0.0:
                problems.append(f"PCC flow at cluster {c.cluster_id} without PCC")
            continue
        if c.cluster_id not in closed_pcc and f != 0.0:
            problems.append(f"flow through open PCC of cluster {c.cluster_id}")
        if abs(f) > c.pcc.capacity:
            problems.append(f"PCC {c.pcc.switch_id} flow {f} exceeds {c.pcc.capacity}")
        net[c.cluster_id] -= f
    scale = max([1.0] + [abs(c.balance) for c in graph.clusters])
    for c, r in net.items():
        if abs(r) > TOL * scale:
            problems.append(f"conservation off by {r} at cluster {c}")
    return problems


def validate_connectivity(graph: GridGraph, plan: ReconfigPlan) -> bool:
    return not violations(graph, plan)


def diff_switch_commands(previous: ReconfigPlan | None, next_plan: ReconfigPlan | None) -> list[tuple[str, SwitchState]]:
    prev = dict(previous.switch_commands) if previous is not None else {}
    nxt = dict(next_plan.switch_commands) if next_plan is not None else {}
    out = []
    for sid in sorted(set(prev) | set(nxt)):
        a = prev.get(sid, SwitchState.OPEN)
        b = nxt.get(sid, SwitchState.OPEN)
        if a is not b:
            out.append((sid, b))
    return out


# -- oracle --------------------------------------------------------------------


def brute_force_reconfigure(graph: GridGraph) -> ReconfigPlan:
    """Exhaustive search over every switch assignment.

    Objective, lexicographic: grid injection, total grid exchange, number of
    closed switches, then the sorted closed-switch tuple.
    """
    if not graph.is_forest():
        raise ValueError("oracle needs a forest link topology")
    switches = graph.switch_ids
    if len(switches) > MAX_ORACLE_SWITCHES:
        raise ValueError(f"oracle limited to {MAX_ORACLE_SWITCHES} switches, got {len(switches)}")
    ids = graph.ids
    bal = graph.balances
    pcc_of_switch = {c.pcc.switch_id: c.cluster_id for c in graph.clusters if c.pcc}
    pccs = {c.cluster_id: c.pcc for c in graph.clusters if c.pcc}
    link_of_switch = {l.switch_id: l for l in graph.links}
    scale = TOL * max([1.0] + [abs(b) for b in bal.values()])

    candidates = []
    for bits in itertools.product((False, True), repeat=len(switches)):
        closed = tuple(s for s, on in zip(switches, bits) if on)
        links = [link_of_switch[s] for s in closed if s in link_of_switch]
        comps = _components(ids, links)
        closed_pcc = {pcc_of_switch[s] for s in closed if s in pcc_of_switch}
        if any(not (g & closed_pcc) for g in comps):
            continue
        bound = math.fsum(max(math.fsum(bal[c] for c in g), 0.0) for g in comps)
        candidates.append((bound, len(closed), closed, comps, links, closed_pcc))
    if not candidates:
        raise InfeasibleTopology("no feasible topology", ids)
    candidates.sort(key=lambda x: (x[0], x[1], x[2]))

    best = None
    for bound, n_closed, closed, comps, links, closed_pcc in candidates:
        if best is not None and bound > best[0][0] + scale:
            break
        result = _evaluate_assignment(comps, links, closed_pcc, bal, pccs)
        if result is None:
            continue
        inj, link_flows, pcc_flows = result
        exchange = math.fsum(abs(f) for f in pcc_flows.values())
        key = (inj, exchange, n_closed, closed)
        if best is None or _better(key, best[0], scale):
            best = (key, link_flows, pcc_flows, comps, closed)
    if best is None:
        raise InfeasibleTopology("no feasible topology", ids)
    _, link_flows, pcc_flows, comps, closed = best
    commands = {s: (SwitchState.CLOSED if s in closed else SwitchState.OPEN) for s in switches}
    return ReconfigPlan(
        switch_commands=commands,
        link_flows=dict(sorted(link_flows.items())),
        pcc_flows={c: float(pcc_flows.get(c, 0.0)) for c in sorted(pccs, key=cluster_key)},
        groups=tuple(comps),
    )


def _better(key, best_key, scale) -> bool:
    for a, b in zip(key[:2], best_key[:2]):
        if a < b - scale:
            return True
        if a > b + scale:
            return False
    return key[2:] < best_key[2:]


def _evaluate_assignment(comps, links, closed_pcc, bal, pccs):
    link_flows: dict[str, float] = {}
    pcc_flows: dict[str, float] = {}
    inj_total = []
    for group in comps:
        g_links = [l for l in links if l.a in group]
        g_pccs = sorted(group & closed_pcc, key=cluster_key)
        total = math.fsum(bal[c] for c in group)
        if len(g_pccs) == 1:
            c = g_pccs[0]
            if abs(total) > pccs[c].capacity + TOL:
                return None
            flows_pcc = {c: _clamp(total, pccs[c].capacity)}
            flows = tree_flows(group, g_links, bal, flows_pcc)
            if not _flows_ok(g_links, flows):
                return None
            inj = max(total, 0.0)
        else:
            lp = _min_injection_lp(sorted(group, key=cluster_key), g_links, bal, {c: pccs[c] for c in g_pccs})
            if lp is None:
                return None
            inj, flows, flows_pcc = lp
        link_flows.update({s: _clamp(v, next(l.capacity for l in g_links if l.switch_id == s)) for s, v in flows.items()})
        pcc_flows.update(flows_pcc)
        inj_total.append(inj)
    return math.fsum(inj_total), link_flows, pcc_flows
