import pytest

from cmgems import ledger as lg
from cmgems.ledger import TxKind


def tx(kind=TxKind.CEM, ts=0, actor="1", size=None, **fields):
    return lg.Transaction.make(kind, actor, fields or {"x": 1}, ts, size)


def test_default_sizes_follow_the_envelope():
    assert tx(TxKind.IUB).size_bytes == lg.IUB_TX_SIZE == 3379
    assert all(tx(k).size_bytes == 4096 for k in TxKind if k is not TxKind.IUB)
    assert lg.TX_SIZE_MIN <= lg.IUB_TX_SIZE <= lg.TX_SIZE_MAX


def test_transaction_round_trip_and_padding():
    t = tx(TxKind.NR, ts=123, actor="cmg", closed=["L12"])
    raw = t.to_bytes()
    assert len(raw) == t.size_bytes
    back, end = lg.Transaction.from_bytes(raw)
    assert back == t and end == len(raw)
    tampered = raw[:-1] + b"\x01"
    with pytest.raises(lg.LedgerError, match="padding"):
        lg.Transaction.from_bytes(tampered)


def test_transaction_validation():
    with pytest.raises(lg.LedgerError):
        tx(size=100)
    with pytest.raises(lg.LedgerError):
        tx(ts=-1)
    with pytest.raises(lg.LedgerError, match="payload"):
        tx(size=lg.TX_SIZE_MIN, blob="x" * 5000)
    with pytest.raises(ValueError):
        lg.canonical_payload({"v": float("nan")})


def test_payload_is_canonical():
    assert lg.canonical_payload({"b": 1, "a": [1.5]}) == b'{"a":[1.5],"b":1}'


def test_genesis_and_empty_chain():
    chain = lg.Chain("c")
    assert chain.blocks == [lg.GENESIS]
    assert lg.GENESIS.prev_hash == lg.ZERO_HASH and lg.GENESIS.txs == ()
    assert chain.size_bytes == lg.BLOCK_HEADER_SIZE == 88
    assert lg.verify_chain(chain)


def test_cut_at_ten_transactions():
    chain = lg.Chain("c")
    for k in range(12):
        chain.append(tx(ts=k))
    assert [len(b.txs) for b in chain.blocks] == [0, 10]
    chain.flush()
    assert [len(b.txs) for b in chain.blocks] == [0, 10, 2]


def test_cut_when_window_expires():
    chain = lg.Chain("c")
    chain.append(tx(ts=0))
    chain.advance(999)
    assert len(chain.blocks) == 1
    chain.advance(1000)
    assert [len(b.txs) for b in chain.blocks] == [0, 1]
    chain.append(tx(ts=1000))
    chain.append(tx(ts=2500))
    chain.flush()
    assert [len(b.txs) for b in chain.blocks] == [0, 1, 1, 1]


def test_timestamps_must_not_go_back():
    chain = lg.Chain("c")
    chain.append(tx(ts=50))
    with pytest.raises(lg.LedgerError):
        chain.append(tx(ts=49))


def test_routing_keeps_cluster_data_off_the_community_chain():
    led = lg.TwoTierLedger(["1", "2"])
    lg.append_tx(led, "1", tx(TxKind.IUB))
    lg.append_tx(led, lg.COMMUNITY, tx(TxKind.ICB))
    for kind in lg.CLUSTER_KINDS:
        with pytest.raises(lg.LedgerError):
            lg.append_tx(led, lg.COMMUNITY, tx(kind))
    for kind in lg.COMMUNITY_KINDS:
        with pytest.raises(lg.LedgerError):
            lg.append_tx(led, "2", tx(kind))
    with pytest.raises(lg.LedgerError):
        led.chain("9")


def test_tampering_breaks_verification():
    chain = lg.Chain("c")
    for k in range(3):
        chain.append(tx(ts=k))
    chain.flush()
    assert lg.verify_chain(chain)
    block = chain.blocks[1]
    forged = lg.Block(block.index, block.prev_hash, block.txs[:2], block.opened_at_ms, block.hash)
    chain.blocks[1] = forged
    assert not lg.verify_chain(chain)


def test_opened_at_is_covered_by_the_hash():
    a = lg.Block.seal(1, lg.GENESIS.hash, [tx()], 0)
    b = lg.Block.seal(1, lg.GENESIS.hash, [tx()], 1)
    assert a.hash != b.hash


def test_dump_and_load(tmp_path):
    led = lg.TwoTierLedger(["1"])
    for k in range(25):
        lg.append_tx(led, "1", tx(TxKind.IUB, ts=k * 300))
    led.flush()
    path = tmp_path / "cluster1.chain"
    lg.dump_chain(led.chain("1"), path)
    loaded = lg.load_chain(path)
    assert loaded.blocks == led.chain("1").blocks
    assert lg.verify_chain(loaded)
    idx = (tmp_path / "cluster1.chain.idx").read_text().splitlines()
    assert idx[0] == f"0 {lg.GENESIS.hash.hex()}"
    assert len(idx) == len(loaded.blocks)


def test_storage_report_and_estimators():
    led = lg.TwoTierLedger(["1"])
    lg.append_tx(led, "1", tx(TxKind.IUB))
    rep = lg.storage_report(led)
    assert rep.pending_tx == 1
    assert rep.total_bytes == 2 * lg.BLOCK_HEADER_SIZE
    led.flush()
    rep = lg.storage_report(led)
    assert rep.bytes_per_chain["1"] == 2 * lg.BLOCK_HEADER_SIZE + lg.IUB_TX_SIZE
    assert rep.tx_per_chain == {"1": 1, lg.COMMUNITY: 0}
    with pytest.raises(ValueError):
        lg.estimate_cluster_round_size(0, 4096)
    with pytest.raises(ValueError):
        lg.estimate_cmg_round_size(0, 4096)


def test_byte_ratio_tracks_round_ratio():
    def chain_bytes(rounds, members=10):
        led = lg.TwoTierLedger(["1"])
        for r in range(rounds):
            for m in range(members):
                lg.append_tx(led, "1", tx(TxKind.IUB, ts=r * 60_000, actor=f"C1M{m:03d}"))
            lg.append_tx(led, "1", tx(TxKind.CEM, ts=r * 60_000 + 100))
            lg.append_tx(led, "1", tx(TxKind.RUM, ts=r * 60_000 + 500))
        led.flush()
        return led.chain("1").size_bytes

    ratio = chain_bytes(46) / chain_bytes(240)
    assert ratio == pytest.approx(46 / 240, rel=0.01)
