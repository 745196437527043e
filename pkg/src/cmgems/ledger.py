"""Two-tier append-only ledger: one hash chain per cluster plus a community chain.

Blocks are sealed when the pending buffer holds 10 transactions or when
1000 ms have passed since the buffer opened. Every field is serialized
little-endian and hashed with SHA-256.
"""
from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

MAX_BLOCK_TX = 10
BLOCK_WINDOW_MS = 1000
TX_SIZE_MIN = 3276
TX_SIZE_MAX = 4096
IUB_TX_SIZE = int(3.3 * 1024)  # 3379
ZERO_HASH = bytes(32)
COMMUNITY = "community"

_TX_HEAD = struct.Struct("<BH")  # kind, actor length
_TX_MID = struct.Struct("<QII")  # timestamp, size, payload length
_BLOCK = struct.Struct("<I Q 32s Q I 32s")  # record length, index, prev, opened_at, tx_count, hash
BLOCK_HEADER_SIZE = _BLOCK.size  # 88


class TxKind(enum.IntEnum):
    IUB = 1
    CEM = 2
    RUM = 3
    ICB = 4
    CMGEM = 5
    NR = 6
    RCM = 7


CLUSTER_KINDS = frozenset({TxKind.IUB, TxKind.CEM, TxKind.RUM})
COMMUNITY_KINDS = frozenset({TxKind.ICB, TxKind.CMGEM, TxKind.NR, TxKind.RCM})


class LedgerError(ValueError):
    pass


def default_tx_size(kind: TxKind) -> int:
    return IUB_TX_SIZE if kind is TxKind.IUB else TX_SIZE_MAX


def canonical_payload(fields: Mapping) -> bytes:
    return json.dumps(fields, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    actor: str
    payload: bytes
    timestamp_ms: int
    size_bytes: int

    def __post_init__(self):
        object.__setattr__(self, "kind", TxKind(self.kind))
        if not TX_SIZE_MIN <= self.size_bytes <= TX_SIZE_MAX:
            raise LedgerError(f"tx size {self.size_bytes} outside [{TX_SIZE_MIN}, {TX_SIZE_MAX}]")
        if self.timestamp_ms < 0:
            raise LedgerError("negative timestamp")
        if self.content_length > self.size_bytes:
            raise LedgerError(f"{self.kind.name} payload needs {self.content_length} bytes, envelope is {self.size_bytes}")

    @classmethod
    def make(cls, kind: TxKind, actor: str, fields: Mapping, timestamp_ms: int, size_bytes: int | None = None):
        kind = TxKind(kind)
        return cls(kind, str(actor), canonical_payload(fields), int(timestamp_ms),
                   default_tx_size(kind) if size_bytes is None else size_bytes)

    @property
    def content_length(self) -> int:
        return _TX_HEAD.size + len(self.actor.encode("utf-8")) + _TX_MID.size + len(self.payload)

    def content(self) -> bytes:
        actor = self.actor.encode("utf-8")
        return b"".join((
            _TX_HEAD.pack(int(self.kind), len(actor)),
            actor,
            _TX_MID.pack(self.timestamp_ms, self.size_bytes, len(self.payload)),
            self.payload,
        ))

    def to_bytes(self) -> bytes:
        """Canonical fixed-size encoding, zero padded to ``size_bytes``."""
        body = self.content()
        return body + bytes(self.size_bytes - len(body))

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> tuple["Transaction", int]:
        try:
            kind, alen = _TX_HEAD.unpack_from(data, offset)
            pos = offset + _TX_HEAD.size
            actor = data[pos:pos + alen].decode("utf-8")
            pos += alen
            ts, size, plen = _TX_MID.unpack_from(data, pos)
            pos += _TX_MID.size
            payload = bytes(data[pos:pos + plen])
            pos += plen
        except (struct.error, UnicodeDecodeError) as exc:
            raise LedgerError(f"corrupt transaction at byte {offset}: {exc}") from None
        end = offset + size
        if len(payload) != plen or end > len(data) or pos > end:
            raise LedgerError(f"truncated transaction at byte {offset}")
        if any(data[pos:end]):
            raise LedgerError(f"nonzero padding in transaction at byte {offset}")
        try:
            tx = cls(TxKind(kind), actor, payload, ts, size)
        except ValueError as exc:
            raise LedgerError(f"invalid transaction at byte {offset}: {exc}") from None
        return tx, end


def _block_digest(index: int, prev_hash: bytes, opened_at_ms: int, txs: Iterable[Transaction]) -> bytes:
    txs = tuple(txs)
    h = hashlib.sha256()
    h.update(struct.pack("<Q32sQI", index, prev_hash, opened_at_ms, len(txs)))
    for tx in txs:
        h.update(tx.content())
        # padding is hashed without materializing it
        pad = tx.size_bytes - tx.content_length
        while pad:
            chunk = min(pad, 4096)
            h.update(_ZEROS[:chunk])
            pad -= chunk
    return h.digest()


_ZEROS = bytes(4096)


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    txs: tuple[Transaction, ...]
    opened_at_ms: int
    hash: bytes

    @classmethod
    def seal(cls, index: int, prev_hash: bytes, txs: Iterable[Transaction], opened_at_ms: int) -> "Block":
        txs = tuple(txs)
        return cls(index, prev_hash, txs, opened_at_ms, _block_digest(index, prev_hash, opened_at_ms, txs))

    def recompute_hash(self) -> bytes:
        return _block_digest(self.index, self.prev_hash, self.opened_at_ms, self.txs)

    @property
    def size_bytes(self) -> int:
        return BLOCK_HEADER_SIZE + sum(tx.size_bytes for tx in self.txs)

    def to_bytes(self) -> bytes:
        head = _BLOCK.pack(self.size_bytes - 4, self.index, self.prev_hash, self.opened_at_ms,
                           len(self.txs), self.hash)
        return head + b"".join(tx.to_bytes() for tx in self.txs)


GENESIS = Block.seal(0, ZERO_HASH, (), 0)


@dataclass
class Chain:
    name: str
    blocks: list[Block] = field(default_factory=lambda: [GENESIS])
    pending: list[Transaction] = field(default_factory=list)
    opened_at_ms: int | None = None
    max_block_tx: int = MAX_BLOCK_TX
    window_ms: int = BLOCK_WINDOW_MS

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    def _cut(self) -> None:
        if not self.pending:
            return
        self.blocks.append(Block.seal(len(self.blocks), self.head.hash, self.pending, self.opened_at_ms))
        self.pending = []
        self.opened_at_ms = None

    def advance(self, now_ms: int) -> None:
        """Seal the pending block if its time window has expired by ``now_ms``."""
        if self.pending and now_ms - self.opened_at_ms >= self.window_ms:
            self._cut()

    def append(self, tx: Transaction) -> None:
        last = self.pending[-1].timestamp_ms if self.pending else self._last_ts()
        if tx.timestamp_ms < last:
            raise LedgerError(f"chain {self.name}: timestamp {tx.timestamp_ms} before {last}")
        self.advance(tx.timestamp_ms)
        if not self.pending:
            self.opened_at_ms = tx.timestamp_ms
        self.pending.append(tx)
        if len(self.pending) >= self.max_block_tx:
            self._cut()

    def flush(self) -> None:
        self._cut()

    def _last_ts(self) -> int:
        for block in reversed(self.blocks):
            if block.txs:
                return block.txs[-1].timestamp_ms
        return 0

    @property
    def size_bytes(self) -> int:
        return sum(b.size_bytes for b in self.blocks)

    @property
    def tx_count(self) -> int:
        return sum(len(b.txs) for b in self.blocks)


def verify_chain(chain: Chain) -> bool:
    blocks = chain.blocks
    if not blocks or blocks[0].prev_hash != ZERO_HASH or blocks[0].index != 0 or blocks[0].txs:
        return False
    for i, block in enumerate(blocks):
        if block.index != i or block.recompute_hash() != block.hash:
            return False
        if i and (block.prev_hash != blocks[i - 1].hash or not 1 <= len(block.txs) <= chain.max_block_tx):
            return False
    return True


class TwoTierLedger:
    def __init__(self, cluster_ids: Iterable[str], max_block_tx: int = MAX_BLOCK_TX,
                 window_ms: int = BLOCK_WINDOW_MS):
        self.cluster_chains = {
            str(c): Chain(f"cluster-{c}", max_block_tx=max_block_tx, window_ms=window_ms) for c in cluster_ids
        }
        self.community_chain = Chain(COMMUNITY, max_block_tx=max_block_tx, window_ms=window_ms)

    def chains(self) -> dict[str, Chain]:
        return {**self.cluster_chains, COMMUNITY: self.community_chain}

    def chain(self, selector: str) -> Chain:
        if selector == COMMUNITY:
            return self.community_chain
        try:
            return self.cluster_chains[str(selector)]
        except KeyError:
            raise LedgerError(f"unknown chain {selector!r}") from None

    def advance(self, now_ms: int) -> None:
        for chain in self.chains().values():
            chain.advance(now_ms)

    def flush(self) -> None:
        for chain in self.chains().values():
            chain.flush()

    def verify(self) -> bool:
        return all(verify_chain(c) for c in self.chains().values())


def append_tx(ledger: TwoTierLedger, chain_selector: str, tx: Transaction) -> TwoTierLedger:
    community = chain_selector == COMMUNITY
    if community and tx.kind in CLUSTER_KINDS:
        raise LedgerError(f"{tx.kind.name} belongs on a cluster chain, not the community chain")
    if not community and tx.kind in COMMUNITY_KINDS:
        raise LedgerError(f"{tx.kind.name} belongs on the community chain, not cluster {chain_selector}")
    ledger.chain(chain_selector).append(tx)
    return ledger


def estimate_cluster_round_size(member_count: int, tx_size: int) -> int:
    if member_count < 1:
        raise ValueError("member_count must be >= 1")
    return (2 + member_count) * tx_size


def estimate_cmg_round_size(cluster_count: int, tx_size: int) -> int:
    if cluster_count < 1:
        raise ValueError("cluster_count must be >= 1")
    return (3 + cluster_count) * tx_size


@dataclass(frozen=True)
class StorageReport:
    bytes_per_chain: dict[str, int]
    blocks_per_chain: dict[str, int]
    tx_per_chain: dict[str, int]
    pending_tx: int

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes_per_chain.values())


def storage_report(ledger: TwoTierLedger) -> StorageReport:
    """Sealed-block accounting; pending transactions are reported but not sized."""
    chains = ledger.chains()
    return StorageReport(
        bytes_per_chain={k: c.size_bytes for k, c in chains.items()},
        blocks_per_chain={k: len(c.blocks) for k, c in chains.items()},
        tx_per_chain={k: c.tx_count for k, c in chains.items()},
        pending_tx=sum(len(c.pending) for c in chains.values()),
    )


# -- dump format -----------------------------------------------------------------


def dump_chain(chain: Chain, path: str | Path) -> None:
    """Write length-prefixed block records plus a ``.idx`` sidecar of ``index hash`` lines."""
    path = Path(path)
    with path.open("wb") as fh:
        for block in chain.blocks:
            fh.write(block.to_bytes())
    index_lines = [f"{b.index} {b.hash.hex()}\n" for b in chain.blocks]
    Path(str(path) + ".idx").write_text("".join(index_lines), encoding="ascii")


def load_chain(path: str | Path, name: str | None = None) -> Chain:
    path = Path(path)
    data = path.read_bytes()
    blocks = []
    pos = 0
    while pos < len(data):
        try:
            length, index, prev, opened, count, digest = _BLOCK.unpack_from(data, pos)
        except struct.error:
            raise LedgerError(f"truncated block header at byte {pos}") from None
        end = pos + 4 + length
        if end > len(data):
            raise LedgerError(f"block {index} overruns the file")
        off = pos + _BLOCK.size
        txs = []
        for _ in range(count):
            tx, off = Transaction.from_bytes(data[:end], off)
            txs.append(tx)
        if off != end:
            raise LedgerError(f"block {index} length does not match its transactions")
        blocks.append(Block(index, prev, tuple(txs), opened, digest))
        pos = end
    sidecar = Path(str(path) + ".idx")
    if sidecar.exists():
        expected = [f"{b.index} {b.hash.hex()}" for b in blocks]
        if sidecar.read_text(encoding="ascii").split("\n")[:-1] != expected:
            raise LedgerError("sidecar index does not match the chain file")
    return Chain(name or path.stem, blocks=blocks or [GENESIS])
