import pytest

from cmgems.market import (
    GridTariff, Offer, Side, clear_order_book, cluster_market, cluster_of_member, cmg_market, net_positions,
    residual_curves, split_book,
)

TARIFF = GridTariff(0.25, 0.05)


def buy(a, q, p):
    return Offer(a, Side.BUY, q, p)


def sell(a, q, p):
    return Offer(a, Side.SELL, q, p)


def test_offer_validation():
    with pytest.raises(ValueError):
        buy("a", 0.0, 0.1)
    with pytest.raises(ValueError):
        sell("a", 1.0, -0.1)
    with pytest.raises(ValueError):
        Offer("a", "hold", 1.0, 0.1)


def test_tariff_validation_and_clamp():
    with pytest.raises(ValueError):
        GridTariff(0.05, 0.25)
    assert TARIFF.clamp(0.9) == 0.25
    assert TARIFF.clamp(0.0) == 0.05
    assert TARIFF.midpoint == pytest.approx(0.15)


def test_larger_side_is_approved_cheapest_first_with_partial_fill():
    res = clear_order_book([buy("b1", 3.0, 0.20)], [sell("s2", 2.0, 0.12), sell("s1", 2.0, 0.10)], TARIFF)
    assert res.matched_volume == 3.0
    assert [(o.actor_id, o.quantity) for o in res.approved_sells] == [("s1", 2.0), ("s2", 1.0)]
    assert [(o.actor_id, o.quantity) for o in res.residual_sells] == [("s2", 1.0)]
    assert res.clearing_price == pytest.approx((0.20 + 0.12) / 2)
    assert [(t.buyer_id, t.seller_id, t.quantity) for t in res.trades] == [("b1", "s1", 2.0), ("b1", "s2", 1.0)]


def test_clearing_price_is_clamped():
    res = clear_order_book([buy("b", 1.0, 0.9)], [sell("s", 1.0, 0.8)], TARIFF)
    assert res.clearing_price == 0.25


def test_one_sided_book_settles_nothing():
    res = clear_order_book([buy("b", 1.0, 0.2)], [], TARIFF)
    assert res.trades == () and res.matched_volume == 0.0
    assert res.clearing_price == TARIFF.midpoint
    assert res.residual_buys == (buy("b", 1.0, 0.2),)


def test_wrong_side_in_book_is_rejected():
    with pytest.raises(ValueError):
        clear_order_book([sell("s", 1.0, 0.1)], [], TARIFF)


def test_member_cluster_parsing():
    assert cluster_of_member("C12M003") == "12"
    assert cluster_of_member("CAM001") == "A"
    assert cluster_of_member("meter-7") is None


def test_cluster_market_rejects_mixed_clusters():
    with pytest.raises(ValueError, match="mixes"):
        cluster_market([buy("C1M001", 1.0, 0.2), sell("C2M001", 1.0, 0.1)], TARIFF)
    with pytest.raises(ValueError, match="no cluster"):
        cluster_market([buy("x", 1.0, 0.2)], TARIFF, membership={})


def test_residuals_merge_by_side_and_price():
    res = cluster_market([buy("C1M001", 1.0, 0.2), buy("C1M002", 2.0, 0.2), buy("C1M003", 1.0, 0.3)], TARIFF)
    curves = residual_curves(res, "1")
    assert [(o.actor_id, o.side, o.quantity, o.price) for o in curves] == [
        ("1", Side.BUY, 3.0, 0.2), ("1", Side.BUY, 1.0, 0.3)]


def test_two_tier_flow_and_net_positions():
    c1 = cluster_market([sell("C1M001", 5.0, 0.08), buy("C1M002", 1.0, 0.2)], TARIFF)
    c2 = cluster_market([buy("C2M001", 3.0, 0.22)], TARIFF)
    offers = residual_curves(c1, "1") + residual_curves(c2, "2")
    cmg = cmg_market(offers, TARIFF)
    assert cmg.matched_volume == 3.0
    assert [(t.buyer_id, t.seller_id, t.quantity) for t in cmg.trades] == [("2", "1", 3.0)]
    assert net_positions(cmg) == {"1": 1.0}


def test_split_book():
    b, s = split_book([buy("a", 1.0, 0.1), sell("b", 1.0, 0.1)])
    assert [o.actor_id for o in b] == ["a"] and [o.actor_id for o in s] == ["b"]
