"""Order-book clearing shared by the cluster market and the community market."""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

EPS = 1e-12


class Side(str, enum.Enum):
    BUY = "buy"
    SELL = "sell"


@dataclass(frozen=True, order=False)
class Offer:
    actor_id: str
    side: Side
    quantity: float
    price: float

    def __post_init__(self):
        object.__setattr__(self, "side", Side(self.side))
        if not (math.isfinite(self.quantity) and self.quantity > 0):
            raise ValueError(f"offer quantity must be > 0, got {self.quantity}")
        if not (math.isfinite(self.price) and self.price >= 0):
            raise ValueError(f"offer price must be >= 0, got {self.price}")

    def sort_key(self):
        return (self.price, str(self.actor_id), self.quantity)


@dataclass(frozen=True)
class GridTariff:
    purchase_price: float
    feedin_price: float

    def __post_init__(self):
        if not (self.purchase_price > self.feedin_price >= 0):
            raise ValueError(
                "tariff needs purchase_price > feedin_price >= 0, got "
                f"{self.purchase_price} / {self.feedin_price}"
            )

    def clamp(self, price: float) -> float:
        return min(max(price, self.feedin_price), self.purchase_price)

    @property
    def midpoint(self) -> float:
        return (self.purchase_price + self.feedin_price) / 2.0


@dataclass(frozen=True)
class Trade:
    buyer_id: str
    seller_id: str
    quantity: float
    price: float


@dataclass(frozen=True)
class ClearingResult:
    trades: tuple[Trade, ...]
    clearing_price: float
    residual_buys: tuple[Offer, ...]
    residual_sells: tuple[Offer, ...]
    matched_volume: float
    approved_buys: tuple[Offer, ...] = field(default=(), repr=False)
    approved_sells: tuple[Offer, ...] = field(default=(), repr=False)


def _approve(book: Sequence[Offer], volume: float) -> tuple[list[Offer], list[Offer]]:
    """Approve offers in ascending price order up to ``volume``; split the marginal one."""
    approved, residual = [], []
    filled = []
    remaining = volume
    for offer in book:
        if remaining <= EPS:
            residual.append(offer)
            continue
        if offer.quantity <= remaining + EPS:
            approved.append(offer)
            filled.append(offer.quantity)
            remaining = volume - math.fsum(filled)
        else:
            approved.append(Offer(offer.actor_id, offer.side, remaining, offer.price))
            rest = offer.quantity - remaining
            if rest > EPS:
                residual.append(Offer(offer.actor_id, offer.side, rest, offer.price))
            filled.append(remaining)
            remaining = 0.0
    return approved, residual


def _walk(buys: Sequence[Offer], sells: Sequence[Offer], price: float) -> list[Trade]:
    trades = []
    i = j = 0
    qb = buys[0].quantity if buys else 0.0
    qs = sells[0].quantity if sells else 0.0
    while i < len(buys) and j < len(sells):
        q = min(qb, qs)
        if q > EPS:
            trades.append(Trade(buys[i].actor_id, sells[j].actor_id, q, price))
        qb -= q
        qs -= q
        if qb <= EPS:
            i += 1
            qb = buys[i].quantity if i < len(buys) else 0.0
        if qs <= EPS:
            j += 1
            qs = sells[j].quantity if j < len(sells) else 0.0
    return trades


def clear_order_book(buys: Iterable[Offer], sells: Iterable[Offer], tariff: GridTariff) -> ClearingResult:
    buys = sorted(buys, key=Offer.sort_key)
    sells = sorted(sells, key=Offer.sort_key)
    for o in buys:
        if o.side is not Side.BUY:
            raise ValueError(f"sell offer from {o.actor_id} in buy book")
    for o in sells:
        if o.side is not Side.SELL:
            raise ValueError(f"buy offer from {o.actor_id} in sell book")

    total_b = math.fsum(o.quantity for o in buys)
    total_s = math.fsum(o.quantity for o in sells)
    matched = min(total_b, total_s)
    if matched <= 0:
        return ClearingResult((), tariff.midpoint, tuple(buys), tuple(sells), 0.0)

    if total_b <= total_s:
        ok_b, res_b = list(buys), []
        ok_s, res_s = _approve(sells, matched)
    else:
        ok_s, res_s = list(sells), []
        ok_b, res_b = _approve(buys, matched)
    # ties in total: both fully approved, both residuals empty

    price = tariff.clamp((ok_b[-1].price + ok_s[-1].price) / 2.0)
    trades = _walk(ok_b, ok_s, price)
    return ClearingResult(
        trades=tuple(trades),
        clearing_price=price,
        residual_buys=tuple(res_b),
        residual_sells=tuple(res_s),
        matched_volume=matched,
        approved_buys=tuple(ok_b),
        approved_sells=tuple(ok_s),
    )


def split_book(offers: Iterable[Offer]) -> tuple[list[Offer], list[Offer]]:
    offers = list(offers)
    return [o for o in offers if o.side is Side.BUY], [o for o in offers if o.side is Side.SELL]


_MEMBER_ID = re.compile(r"^C(\w+?)M\d+$")


def cluster_of_member(member_id: str) -> str | None:
    """Cluster id embedded in a synthetic member id (``C<cluster>M<nnn>``), else None."""
    m = _MEMBER_ID.match(str(member_id))
    return m.group(1) if m else None


def cluster_market(
    bids: Iterable[Offer],
    tariff: GridTariff,
    membership: Mapping[str, str] | None = None,
) -> ClearingResult:
    bids = list(bids)
    owners = set()
    for o in bids:
        owner = membership.get(o.actor_id) if membership is not None else cluster_of_member(o.actor_id)
        if membership is not None and owner is None:
            raise ValueError(f"member {o.actor_id!r} has no cluster")
        if owner is not None:
            owners.add(owner)
    if len(owners) > 1:
        raise ValueError(f"cluster market mixes members of clusters {sorted(owners)}")
    buys, sells = split_book(bids)
    return clear_order_book(buys, sells, tariff)


def residual_curves(result: ClearingResult, cluster_id: str) -> list[Offer]:
    """Relabel unmatched offers with the cluster id; offers at the same side and price merge."""
    merged: dict[tuple[Side, float], list[float]] = {}
    for o in (*result.residual_buys, *result.residual_sells):
        merged.setdefault((o.side, o.price), []).append(o.quantity)
    return [
        Offer(str(cluster_id), side, math.fsum(qs), price)
        for (side, price), qs in sorted(merged.items(), key=lambda kv: (kv[0][0].value, kv[0][1]))
    ]


def cmg_market(cluster_offers: Iterable[Offer], tariff: GridTariff) -> ClearingResult:
    buys, sells = split_book(cluster_offers)
    return clear_order_book(buys, sells, tariff)


def net_positions(result: ClearingResult) -> dict[str, float]:
    """Unmatched quantity per actor, signed (sell positive, buy negative)."""
    out: dict[str, list[float]] = {}
    for o in result.residual_sells:
        out.setdefault(o.actor_id, []).append(o.quantity)
    for o in result.residual_buys:
        out.setdefault(o.actor_id, []).append(-o.quantity)
    return {k: math.fsum(v) for k, v in sorted(out.items())}
