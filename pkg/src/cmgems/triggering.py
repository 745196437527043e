"""Round triggering: periodic deadlines, send-on-delta and send-on-area checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable


@dataclass(frozen=True)
class Periodic:
    period_s: int

    def __post_init__(self):
        if self.period_s <= 0 or self.period_s % 60:
            raise ValueError(f"period_s must be a positive multiple of 60, got {self.period_s}")


@dataclass(frozen=True)
class SoD:
    delta_kw: float

    def __post_init__(self):
        if not self.delta_kw >= 0:
            raise ValueError(f"delta_kw must be >= 0, got {self.delta_kw}")


@dataclass(frozen=True)
class SoA:
    delta_kwh: float

    def __post_init__(self):
        if not self.delta_kwh >= 0:
            raise ValueError(f"delta_kwh must be >= 0, got {self.delta_kwh}")


@dataclass(frozen=True)
class TriggerMode:
    rule: Periodic | SoD | SoA
    simultaneous_update: bool = True


@dataclass
class MemberReference:
    reference_power: float
    reference_energy_rate: float
    accumulated_deviation: float = 0.0
    last_trigger_tick: int = 0


class TriggerState:
    """Per-member references, owned by a single simulation loop."""

    def __init__(self, members: Iterable[Hashable] = (), simultaneous_update: bool = True):
        self.simultaneous_update = simultaneous_update
        self._members: set[Hashable] = set(members)
        self._refs: dict[Hashable, MemberReference] = {}

    def __contains__(self, member) -> bool:
        return member in self._refs

    def reference(self, member) -> MemberReference:
        try:
            return self._refs[member]
        except KeyError:
            raise KeyError(f"unknown member {member!r} (no committed reference)") from None

    def members(self) -> list:
        return sorted(self._members | set(self._refs), key=str)

    def snapshot(self) -> dict:
        return {m: MemberReference(**vars(r)) for m, r in self._refs.items()}


def sod_check(state: TriggerState, member, current_power: float, delta_kw: float) -> bool:
    ref = state.reference(member)
    return abs(current_power - ref.reference_power) >= delta_kw


def soa_check(state: TriggerState, member, current_energy_rate: float, delta_kwh: float) -> bool:
    # Deviations accumulate as absolute values so oscillations cannot cancel out.
    ref = state.reference(member)
    ref.accumulated_deviation += abs(current_energy_rate - ref.reference_energy_rate)
    return ref.accumulated_deviation >= delta_kwh


def periodic_check(now_tick: int, last_round_tick: int, period_s: int) -> bool:
    return (now_tick - last_round_tick) * 60 >= period_s


def commit_reference(
    state: TriggerState,
    member,
    power: float,
    energy_rate: float,
    tick: int,
    current: dict | None = None,
) -> TriggerState:
    """Commit ``member``'s reference at ``tick``.

    With simultaneous update every other known member is re-referenced too:
    from ``current`` (member -> (power, energy_rate)) when given, otherwise its
    stored reference is kept and only the accumulator and tick are reset.
    """
    state._members.add(member)
    state._refs[member] = MemberReference(power, energy_rate, 0.0, tick)
    if state.simultaneous_update:
        current = current or {}
        for other in list(state._refs):
            if other == member:
                continue
            if other in current:
                p, r = current[other]
                state._refs[other] = MemberReference(p, r, 0.0, tick)
            else:
                ref = state._refs[other]
                ref.accumulated_deviation = 0.0
                ref.last_trigger_tick = tick
    return state


def commit_all(state: TriggerState, values: dict, tick: int) -> TriggerState:
    """Commit references for every member in ``values`` (member -> (power, energy_rate))."""
    for member, (power, rate) in values.items():
        state._members.add(member)
        state._refs[member] = MemberReference(power, rate, 0.0, tick)
    return state


def evaluate(
    state: TriggerState,
    mode: TriggerMode,
    powers: dict,
    tick: int,
    last_round_tick: int,
) -> tuple[bool, list]:
    """Run one tick of the configured rule.

    Returns ``(round_due, fired_members)``. For event rules, references of the
    fired members (or of every member in simultaneous mode) are committed at
    ``tick`` from ``powers``.
    """
    rule = mode.rule
    if isinstance(rule, Periodic):
        due = periodic_check(tick, last_round_tick, rule.period_s)
        if due:
            commit_all(state, {m: (p, p / 60.0) for m, p in powers.items()}, tick)
        return due, []

    fired = []
    for member in sorted(powers, key=str):
        p = powers[member]
        if isinstance(rule, SoD):
            hit = sod_check(state, member, p, rule.delta_kw)
        else:
            hit = soa_check(state, member, p / 60.0, rule.delta_kwh)
        if hit:
            fired.append(member)
    if not fired:
        return False, []
    to_commit = powers if mode.simultaneous_update else {m: powers[m] for m in fired}
    commit_all(state, {m: (p, p / 60.0) for m, p in to_commit.items()}, tick)
    return True, fired
