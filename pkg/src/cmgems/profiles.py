"""Member demand/PV series: CSV ingestion, power balances and synthetic day profiles.

All series live on a single one-minute grid. A member's power balance is
``pv - demand`` (positive means surplus) and its one-minute energy is that
balance held for 60 s.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SAMPLE_SECONDS = 60
MINUTES_PER_DAY = 1440
CSV_HEADER = ("member_id", "cluster_id", "minute", "demand_kw", "pv_kw")


class ProfileError(ValueError):
    """Raised for malformed profile input; carries the offending row/column when known."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


@dataclass(frozen=True, eq=False)
class MemberProfile:
    member_id: str
    cluster_id: str
    demand: np.ndarray
    pv: np.ndarray

    def __post_init__(self):
        demand = np.array(self.demand, dtype=float)
        pv = np.array(self.pv, dtype=float)
        if demand.ndim != 1 or pv.ndim != 1:
            raise ProfileError(f"member {self.member_id}: series must be one-dimensional")
        if len(demand) < 1 or len(demand) != len(pv):
            raise ProfileError(
                f"member {self.member_id}: demand and pv lengths differ or are empty "
                f"({len(demand)} vs {len(pv)})"
            )
        if not (np.all(np.isfinite(demand)) and np.all(np.isfinite(pv))):
            raise ProfileError(f"member {self.member_id}: non-finite sample")
        if np.any(demand < 0) or np.any(pv < 0):
            raise ProfileError(f"member {self.member_id}: negative sample")
        demand.flags.writeable = False
        pv.flags.writeable = False
        object.__setattr__(self, "demand", demand)
        object.__setattr__(self, "pv", pv)

    def __len__(self) -> int:
        return len(self.demand)

    def __eq__(self, other):
        if not isinstance(other, MemberProfile):
            return NotImplemented
        return (
            self.member_id == other.member_id
            and self.cluster_id == other.cluster_id
            and np.array_equal(self.demand, other.demand)
            and np.array_equal(self.pv, other.pv)
        )

    __hash__ = None

    @property
    def balance(self) -> np.ndarray:
        """Full power-balance series (kW)."""
        return self.pv - self.demand


def _check_index(profile: MemberProfile, t: int) -> None:
    if not 0 <= t < len(profile):
        raise IndexError(f"sample {t} outside 0..{len(profile) - 1} for member {profile.member_id}")


def power_balance(profile: MemberProfile, t: int) -> float:
    _check_index(profile, t)
    return float(profile.pv[t] - profile.demand[t])


def energy_window(profile: MemberProfile, t: int) -> float:
    """Energy (kWh) exchanged by the member over the minute starting at sample ``t``."""
    return power_balance(profile, t) * SAMPLE_SECONDS / 3600.0


# -- CSV -------------------------------------------------------------------


def load_profiles(path: str | Path, expected_resolution: int = SAMPLE_SECONDS) -> list[MemberProfile]:
    if expected_resolution != SAMPLE_SECONDS:
        raise ProfileError(
            f"resolution mismatch: profile files are on a {SAMPLE_SECONDS} s grid, "
            f"caller expected {expected_resolution} s"
        )
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ProfileError("no members")
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise ProfileError(f"bad header {header!r}, expected {','.join(CSV_HEADER)}", row=1)

        series: dict[str, tuple[str, list[float], list[float]]] = {}
        order: list[str] = []
        prev_key: tuple[str, int] | None = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise ProfileError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", row=lineno)
            member_id, cluster_id, minute_s, demand_s, pv_s = (c.strip() for c in row)
            if not member_id:
                raise ProfileError("empty member id", row=lineno, column="member_id")
            try:
                minute = int(minute_s)
            except ValueError:
                raise ProfileError(f"not an integer: {minute_s!r}", row=lineno, column="minute") from None
            values = []
            for name, text in (("demand_kw", demand_s), ("pv_kw", pv_s)):
                try:
                    value = float(text)
                except ValueError:
                    raise ProfileError(f"not a number: {text!r}", row=lineno, column=name) from None
                if not math.isfinite(value):
                    raise ProfileError(f"non-finite value {text!r}", row=lineno, column=name)
                if value < 0:
                    raise ProfileError(f"negative sample {value}", row=lineno, column=name)
                values.append(value)

            if prev_key is not None and (member_id, minute) <= prev_key and member_id == prev_key[0]:
                raise ProfileError("rows not sorted by (member_id, minute)", row=lineno, column="minute")
            if member_id not in series:
                if member_id in order:
                    raise ProfileError("rows not sorted by member_id", row=lineno, column="member_id")
                series[member_id] = (cluster_id, [], [])
                order.append(member_id)
            elif prev_key is not None and prev_key[0] != member_id:
                raise ProfileError("rows not sorted by member_id", row=lineno, column="member_id")
            owner, demand, pv = series[member_id]
            if owner != cluster_id:
                raise ProfileError(
                    f"member {member_id} listed under clusters {owner!r} and {cluster_id!r}",
                    row=lineno,
                    column="cluster_id",
                )
            if minute != len(demand):
                raise ProfileError(
                    f"resolution mismatch: expected minute {len(demand)}, got {minute}",
                    row=lineno,
                    column="minute",
                )
            demand.append(values[0])
            pv.append(values[1])
            prev_key = (member_id, minute)

    if not order:
        raise ProfileError("no members")
    lengths = {len(series[m][1]) for m in order}
    if len(lengths) > 1:
        raise ProfileError(f"ragged series lengths {sorted(lengths)}")
    return [MemberProfile(m, series[m][0], series[m][1], series[m][2]) for m in order]


def write_profiles(profiles: Iterable[MemberProfile], path: str | Path) -> None:
    rows = sorted(profiles, key=lambda p: p.member_id)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for p in rows:
            for minute, (d, g) in enumerate(zip(p.demand.tolist(), p.pv.tolist())):
                writer.writerow((p.member_id, p.cluster_id, minute, repr(d), repr(g)))


# -- synthetic generation ----------------------------------------------------


class Role(str, enum.Enum):
    INDUSTRIAL = "industrial"
    COMMERCIAL = "commercial"
    CAMPUS = "campus"
    SINGLE_RESIDENTIAL = "single_residential"
    MULTI_RESIDENTIAL = "multi_residential"


class DayKind(str, enum.Enum):
    WEEKDAY = "weekday"
    WEEKEND = "weekend"


# Piecewise-linear day curves, (hour, relative level).
DEMAND_TEMPLATES: dict[str, tuple[tuple[float, float], ...]] = {
    "industrial_shifts": (
        (0, 0.40), (5.5, 0.40), (6.5, 1.00), (13.75, 1.00), (14.0, 0.80),
        (14.5, 0.95), (21.75, 0.95), (22.5, 0.40), (24, 0.40),
    ),
    "commercial_business": (
        (0, 0.15), (7.5, 0.15), (9.0, 1.00), (20.0, 1.00), (21.0, 0.15), (24, 0.15),
    ),
    "campus_school": (
        (0, 0.25), (7.0, 0.25), (8.5, 1.00), (14.0, 1.00), (15.0, 0.80),
        (19.0, 0.85), (21.0, 0.25), (24, 0.25),
    ),
    "campus_reduced": (
        (0, 0.25), (9.0, 0.25), (11.0, 0.35), (18.0, 0.35), (20.0, 0.25), (24, 0.25),
    ),
    "residential_evening": (
        (0, 0.30), (5.5, 0.30), (7.0, 0.60), (9.0, 0.35), (16.5, 0.35),
        (18.5, 1.00), (22.0, 1.00), (23.5, 0.30), (24, 0.30),
    ),
    "multi_residential_evening": (
        (0, 0.35), (6.0, 0.35), (7.5, 0.70), (9.5, 0.45), (17.0, 0.45),
        (19.0, 1.00), (22.5, 0.90), (24, 0.35),
    ),
}

# Hours over which the commercial weekend uplift applies (ramps follow the template).
COMMERCIAL_BUSINESS_WINDOW = ((7.5, 0.0), (9.0, 1.0), (20.0, 1.0), (21.0, 0.0))


@dataclass(frozen=True)
class RoleShape:
    """Magnitude knobs per role (kW)."""

    base_demand: tuple[float, float]
    pv_peak: tuple[float, float]
    noise: float
    shift_minutes: int
    # on/off machine load that runs only while the template level is above step_gate
    step_load: tuple[float, float] = (0.0, 0.0)
    step_dwell_minutes: float = 45.0
    step_gate: float = 0.7


ROLE_SHAPES: dict[Role, RoleShape] = {
    Role.INDUSTRIAL: RoleShape((8.0, 24.0), (40.0, 100.0), 0.06, 20, (10.0, 30.0), 60.0),
    Role.COMMERCIAL: RoleShape((4.0, 12.0), (0.0, 0.0), 0.06, 30),
    Role.CAMPUS: RoleShape((8.0, 24.0), (50.0, 110.0), 0.06, 20, (5.0, 25.0), 40.0),
    Role.SINGLE_RESIDENTIAL: RoleShape((1.5, 4.0), (4.0, 8.0), 0.10, 45),
    Role.MULTI_RESIDENTIAL: RoleShape((3.0, 8.0), (20.0, 40.0), 0.08, 45),
}


@dataclass(frozen=True)
class ClusterRole:
    role: Role
    solar_penetration: float
    schedule_shape: str
    # fixed number of PV members; overrides the penetration fraction when set
    pv_members: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.solar_penetration <= 1.0:
            raise ValueError(f"solar_penetration must be in [0, 1], got {self.solar_penetration}")
        if self.schedule_shape not in DEMAND_TEMPLATES:
            raise ValueError(f"unknown schedule shape {self.schedule_shape!r}")

    @classmethod
    def default(cls, role: Role | str) -> "ClusterRole":
        role = Role(role)
        return _DEFAULT_ROLES[role]

    def pv_count(self, member_count: int) -> int:
        if self.pv_members is not None:
            return min(self.pv_members, member_count)
        return int(math.floor(self.solar_penetration * member_count + 0.5))


_DEFAULT_ROLES = {
    Role.INDUSTRIAL: ClusterRole(Role.INDUSTRIAL, 0.40, "industrial_shifts"),
    Role.COMMERCIAL: ClusterRole(Role.COMMERCIAL, 0.0, "commercial_business"),
    Role.CAMPUS: ClusterRole(Role.CAMPUS, 0.30, "campus_school"),
    Role.SINGLE_RESIDENTIAL: ClusterRole(Role.SINGLE_RESIDENTIAL, 0.60, "residential_evening"),
    Role.MULTI_RESIDENTIAL: ClusterRole(
        Role.MULTI_RESIDENTIAL, 0.10, "multi_residential_evening", pv_members=2
    ),
}

WEEKEND_FACTORS = {
    Role.INDUSTRIAL: 0.90,
    Role.SINGLE_RESIDENTIAL: 1.5,
    Role.MULTI_RESIDENTIAL: 1.5,
}
COMMERCIAL_WEEKEND_UPLIFT = 1.0  # business-hours demand doubles


def _curve(points: Sequence[tuple[float, float]], n: int = MINUTES_PER_DAY) -> np.ndarray:
    hours = np.arange(n) / 60.0
    xs, ys = zip(*points)
    return np.interp(hours % 24.0, xs, ys)


def pv_shape(n: int = MINUTES_PER_DAY, sunrise: float = 6.0, sunset: float = 20.0) -> np.ndarray:
    """Clear-day PV shape: half-sine between sunrise and sunset, peak 1."""
    hours = (np.arange(n) / 60.0) % 24.0
    phase = (hours - sunrise) / (sunset - sunrise)
    shape = np.sin(np.pi * phase)
    shape[(phase <= 0) | (phase >= 1)] = 0.0
    return shape


def _ar1(rng: np.random.Generator, n: int, phi: float = 0.95) -> np.ndarray:
    shocks = rng.standard_normal(n) * math.sqrt(1.0 - phi * phi)
    out = np.empty(n)
    acc = rng.standard_normal()
    for i in range(n):
        acc = phi * acc + shocks[i]
        out[i] = acc
    return out


def _telegraph(rng: np.random.Generator, n: int, dwell: float) -> np.ndarray:
    """0/1 series that flips after geometric dwell times with mean ``dwell`` minutes."""
    out = np.zeros(n)
    state = rng.integers(0, 2)
    pos = 0
    while pos < n:
        run = int(rng.geometric(1.0 / dwell))
        out[pos:pos + run] = state
        pos += run
        state = 1 - state
    return out


def synthesize_profiles(
    role: ClusterRole | Role | str,
    day: DayKind | str,
    member_count: int,
    seed: int,
    *,
    cluster_id: str = "1",
    minutes: int = MINUTES_PER_DAY,
    sunrise: float = 6.0,
    sunset: float = 20.0,
) -> list[MemberProfile]:
    """Generate ``member_count`` seeded profiles for one cluster.

    Random draws do not depend on ``day``, so weekday and weekend variants of the
    same seed differ only by the documented day modifiers.
    """
    if member_count < 1:
        raise ValueError("member_count must be >= 1")
    if not isinstance(role, ClusterRole):
        role = ClusterRole.default(role)
    day = DayKind(day)
    shape = ROLE_SHAPES[role.role]
    rng = np.random.default_rng(np.random.SeedSequence([seed, _stable_hash(cluster_id)]))

    base = rng.uniform(*shape.base_demand, size=member_count)
    shifts = rng.integers(-shape.shift_minutes, shape.shift_minutes + 1, size=member_count)
    n_pv = role.pv_count(member_count)
    pv_idx = np.sort(rng.choice(member_count, size=n_pv, replace=False)) if n_pv else np.array([], int)
    peaks = rng.uniform(*shape.pv_peak, size=n_pv) if n_pv else np.array([])
    noise = np.stack([_ar1(rng, minutes) for _ in range(member_count)])
    has_steps = shape.step_load[1] > 0
    step_kw = rng.uniform(*shape.step_load, size=member_count) if has_steps else np.zeros(member_count)
    steps = (np.stack([_telegraph(rng, minutes, shape.step_dwell_minutes) for _ in range(member_count)])
             if has_steps else np.zeros((member_count, minutes)))

    template = _curve(DEMAND_TEMPLATES[role.schedule_shape], minutes)
    if day is DayKind.WEEKEND and role.role is Role.CAMPUS:
        template = _curve(DEMAND_TEMPLATES["campus_reduced"], minutes)
    business = _curve(COMMERCIAL_BUSINESS_WINDOW + ((0, 0.0), (24, 0.0)), minutes)
    pv_unit = pv_shape(minutes, sunrise, sunset)

    profiles = []
    for k in range(member_count):
        level = np.roll(template, int(shifts[k]))
        demand = np.clip(base[k] * level * (1.0 + shape.noise * noise[k]), 0.0, None)
        if has_steps:
            demand = demand + step_kw[k] * steps[k] * (level > shape.step_gate)
        if day is DayKind.WEEKEND:
            if role.role is Role.COMMERCIAL:
                demand = demand * (1.0 + COMMERCIAL_WEEKEND_UPLIFT * np.roll(business, int(shifts[k])))
            else:
                demand = demand * WEEKEND_FACTORS.get(role.role, 1.0)
        pv = np.zeros(minutes)
        hit = np.nonzero(pv_idx == k)[0]
        if hit.size:
            pv = peaks[hit[0]] * pv_unit
        profiles.append(MemberProfile(f"C{cluster_id}M{k + 1:03d}", str(cluster_id), demand, pv))
    return profiles


def _stable_hash(text: str) -> int:
    # str hash is salted per process; seeds must be reproducible
    return int.from_bytes(str(text).encode("utf-8"), "little") % (2**63)


def member_matrix(profiles: Sequence[MemberProfile]) -> np.ndarray:
    """Stack member balances into a (members, samples) array."""
    return np.stack([p.balance for p in profiles])
