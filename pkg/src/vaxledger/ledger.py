"""Append-only hash-chained block ledger.

Stored digests (tx_id, block_hash) are caches; verification always recomputes
them from canonical bytes so tampering with either the data or the cache is
caught.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import encoding
from .encoding import Reader, Writer, ZERO_DIGEST
from .errors import AuthError, ChainError, EncodingError, StateError
from .identity import ActorDirectory, TxKind, verify as verify_signature
from .transactions import Transaction, transaction_bytes, transaction_from_bytes, verify_transaction_signature

MAX_BLOCK_TRANSACTIONS = 256

SNAPSHOT_MAGIC = b"VXLG"
SNAPSHOT_HEADER_SIZE = 16


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    timestamp: int
    transactions: tuple[Transaction, ...]
    proposer: str
    signature: bytes
    block_hash: bytes = field(compare=False)


def tx_list_digest(
    transactions: tuple[Transaction, ...], hash_alg: int = encoding.DEFAULT_HASH_ALG
) -> bytes:
    """Digest over the recomputed ids of every contained transaction."""
    w = Writer()
    for tx in transactions:
        w.raw(encoding.digest(transaction_bytes(tx), hash_alg))
    return encoding.digest(w.getvalue(), hash_alg)


def header_signing_bytes(
    height: int,
    prev_hash: bytes,
    timestamp: int,
    txs_digest: bytes,
    hash_alg: int = encoding.DEFAULT_HASH_ALG,
) -> bytes:
    w = Writer()
    w.u8(encoding.SCHEMA_VERSION)
    w.u8(hash_alg)
    w.u64(height)
    w.digest32(prev_hash)
    w.u64(timestamp)
    w.digest32(txs_digest)
    return w.getvalue()


def header_bytes(block: Block, hash_alg: int = encoding.DEFAULT_HASH_ALG) -> bytes:
    """Full header record: signed fields plus proposer and signature."""
    w = Writer()
    w.raw(
        header_signing_bytes(
            block.height,
            block.prev_hash,
            block.timestamp,
            tx_list_digest(block.transactions, hash_alg),
            hash_alg,
        )
    )
    w.string(block.proposer)
    w.bytes_(block.signature)
    return w.getvalue()


def compute_block_hash(block: Block, hash_alg: int = encoding.DEFAULT_HASH_ALG) -> bytes:
    return encoding.digest(header_bytes(block, hash_alg), hash_alg)


def block_bytes(block: Block, hash_alg: int = encoding.DEFAULT_HASH_ALG) -> bytes:
    """Canonical block serialization: header record then transaction records."""
    w = Writer()
    w.raw(header_bytes(block, hash_alg))
    w.u32(len(block.transactions))
    for tx in block.transactions:
        w.bytes_(transaction_bytes(tx))
    return w.getvalue()


def block_from_bytes(data: bytes, hash_alg: int = encoding.DEFAULT_HASH_ALG) -> Block:
    r = Reader(data)
    version = r.u8()
    if version != encoding.SCHEMA_VERSION:
        raise EncodingError(f"unsupported schema version {version}")
    alg = r.u8()
    if alg != hash_alg:
        raise EncodingError(f"block hash algorithm {alg} does not match ledger {hash_alg}")
    height = r.u64()
    prev_hash = r.digest32()
    timestamp = r.u64()
    r.digest32()  # tx list digest; recomputed below from the records
    proposer = r.string()
    signature = r.bytes_()
    count = r.u32()
    transactions = tuple(
        transaction_from_bytes(r.bytes_(), hash_alg) for _ in range(count)
    )
    r.expect_end()
    block = Block(
        height=height,
        prev_hash=prev_hash,
        timestamp=timestamp,
        transactions=transactions,
        proposer=proposer,
        signature=signature,
        block_hash=b"",
    )
    return replace(block, block_hash=compute_block_hash(block, hash_alg))


def make_block(
    height: int,
    prev_hash: bytes,
    timestamp: int,
    transactions: tuple[Transaction, ...],
    proposer,  # ActorIdentity
    hash_alg: int = encoding.DEFAULT_HASH_ALG,
) -> Block:
    """Assemble and sign a block as `proposer`."""
    if len(transactions) > MAX_BLOCK_TRANSACTIONS:
        raise ChainError(
            f"block holds {len(transactions)} transactions, cap is {MAX_BLOCK_TRANSACTIONS}"
        )
    digest = tx_list_digest(transactions, hash_alg)
    message = header_signing_bytes(height, prev_hash, timestamp, digest, hash_alg)
    signature = proposer.sign(message)
    block = Block(
        height=height,
        prev_hash=prev_hash,
        timestamp=timestamp,
        transactions=transactions,
        proposer=proposer.actor_id,
        signature=signature,
        block_hash=b"",
    )
    return replace(block, block_hash=compute_block_hash(block, hash_alg))


def make_genesis(
    proposer,
    timestamp: int = 0,
    hash_alg: int = encoding.DEFAULT_HASH_ALG,
) -> Block:
    return make_block(0, ZERO_DIGEST, timestamp, (), proposer, hash_alg)


@dataclass(frozen=True)
class LedgerState:
    """Immutable chain snapshot; append returns a new state."""

    blocks: tuple[Block, ...] = ()
    index: dict[bytes, tuple[int, int]] = field(default_factory=dict)
    hash_alg: int = encoding.DEFAULT_HASH_ALG

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def head(self) -> Block | None:
        return self.blocks[-1] if self.blocks else None

    def transactions(self):
        for block in self.blocks:
            yield from block.transactions

    def __contains__(self, tx_id: bytes) -> bool:
        return tx_id in self.index


def _check_block(
    ledger: LedgerState, block: Block, directory: ActorDirectory
) -> None:
    """Raise if `block` cannot extend `ledger`."""
    expected_height = len(ledger.blocks)
    if block.height != expected_height:
        raise ChainError(f"block height {block.height}, expected {expected_height}")
    parent = ledger.head
    if parent is None:
        if block.prev_hash != ZERO_DIGEST:
            raise ChainError("genesis prev_hash must be 32 zero bytes")
    else:
        parent_hash = compute_block_hash(parent, ledger.hash_alg)
        if block.prev_hash != parent_hash:
            raise ChainError(f"prev_hash mismatch at height {block.height}")
        if block.timestamp < parent.timestamp:
            raise StateError(
                f"block timestamp {block.timestamp} before parent {parent.timestamp}"
            )
    if len(block.transactions) > MAX_BLOCK_TRANSACTIONS:
        raise ChainError("block exceeds transaction capacity")

    proposer_key = directory.public_key(block.proposer)
    if proposer_key is None:
        raise AuthError(f"unknown proposer {block.proposer!r}")
    message = header_signing_bytes(
        block.height,
        block.prev_hash,
        block.timestamp,
        tx_list_digest(block.transactions, ledger.hash_alg),
        ledger.hash_alg,
    )
    if not verify_signature(proposer_key, message, block.signature):
        raise AuthError(f"bad proposer signature at height {block.height}")
    for position, tx in enumerate(block.transactions):
        author_key = directory.public_key(tx.author)
        if author_key is None:
            raise AuthError(f"unknown author {tx.author!r} at height {block.height}")
        if not verify_transaction_signature(tx, author_key):
            raise AuthError(
                f"bad transaction signature at height {block.height} position {position}"
            )
        if tx.tx_id in ledger.index:
            raise ChainError(f"transaction already committed at height {block.height}")


def append_block(
    ledger: LedgerState, block: Block, directory: ActorDirectory
) -> LedgerState:
    """Append after full validation; the input ledger is never modified."""
    _check_block(ledger, block, directory)
    index = dict(ledger.index)
    for position, tx in enumerate(block.transactions):
        index[tx.tx_id] = (block.height, position)
    return LedgerState(
        blocks=ledger.blocks + (block,), index=index, hash_alg=ledger.hash_alg
    )


@dataclass(frozen=True)
class VerificationReport:
    valid: bool
    block_count: int
    first_bad_height: int | None = None
    reason: str | None = None

    def __str__(self) -> str:
        if self.valid:
            return f"valid, {self.block_count} blocks"
        return f"invalid at height {self.first_bad_height}: {self.reason}"


def verify_chain(ledger: LedgerState, directory: ActorDirectory) -> VerificationReport:
    """Recompute every digest and signature from canonical bytes."""
    prev_hash = ZERO_DIGEST
    prev_timestamp = None
    for expected_height, block in enumerate(ledger.blocks):
        def bad(reason: str) -> VerificationReport:
            return VerificationReport(
                valid=False,
                block_count=len(ledger.blocks),
                first_bad_height=expected_height,
                reason=reason,
            )

        if block.height != expected_height:
            return bad(f"height {block.height} out of sequence")
        if block.prev_hash != prev_hash:
            return bad("hash pointer mismatch")
        if prev_timestamp is not None and block.timestamp < prev_timestamp:
            return bad("timestamp before parent")

        txs_digest = tx_list_digest(block.transactions, ledger.hash_alg)
        message = header_signing_bytes(
            block.height, block.prev_hash, block.timestamp, txs_digest, ledger.hash_alg
        )
        proposer_key = directory.public_key(block.proposer)
        if proposer_key is None:
            return bad(f"unknown proposer {block.proposer!r}")
        if not verify_signature(proposer_key, message, block.signature):
            return bad("proposer signature failure")

        for position, tx in enumerate(block.transactions):
            author_key = directory.public_key(tx.author)
            if author_key is None:
                return bad(f"unknown author {tx.author!r}")
            if not verify_transaction_signature(tx, author_key):
                return bad(f"transaction signature failure at position {position}")
            recomputed_id = encoding.digest(transaction_bytes(tx), ledger.hash_alg)
            if recomputed_id != tx.tx_id:
                return bad(f"transaction digest mismatch at position {position}")
            indexed = ledger.index.get(tx.tx_id)
            if indexed != (expected_height, position):
                return bad("index inconsistent with chain")

        recomputed_hash = compute_block_hash(block, ledger.hash_alg)
        if recomputed_hash != block.block_hash:
            return bad("block hash mismatch")
        prev_hash = recomputed_hash
        prev_timestamp = block.timestamp

    indexed_total = len(ledger.index)
    chain_total = sum(len(block.transactions) for block in ledger.blocks)
    if indexed_total != chain_total:
        return VerificationReport(
            valid=False,
            block_count=len(ledger.blocks),
            first_bad_height=0,
            reason="index size inconsistent with chain",
        )
    return VerificationReport(valid=True, block_count=len(ledger.blocks))


@dataclass(frozen=True)
class QueryFilter:
    kind: TxKind | None = None
    author: str | None = None
    subject: str | None = None
    from_timestamp: int | None = None
    to_timestamp: int | None = None

    def matches(self, tx: Transaction) -> bool:
        if self.kind is not None and tx.kind != self.kind:
            return False
        if self.author is not None and tx.author != self.author:
            return False
        if self.subject is not None and self.subject not in tx.subjects():
            return False
        if self.from_timestamp is not None and tx.timestamp < self.from_timestamp:
            return False
        if self.to_timestamp is not None and tx.timestamp > self.to_timestamp:
            return False
        return True


def query(ledger: LedgerState, filter_: QueryFilter | None = None) -> list[Transaction]:
    """All matching transactions in chain order; empty filter returns everything."""
    filter_ = filter_ or QueryFilter()
    return [tx for tx in ledger.transactions() if filter_.matches(tx)]


def write_snapshot(ledger: LedgerState) -> bytes:
    """Serialize the chain with the 16-byte VXLG header; bit-exact round-trip."""
    w = Writer()
    w.raw(SNAPSHOT_MAGIC)
    w.u8(encoding.SCHEMA_VERSION)
    w.u8(ledger.hash_alg)
    w.u16(0)
    w.u32(len(ledger.blocks))
    w.u32(0)
    for block in ledger.blocks:
        w.bytes_(block_bytes(block, ledger.hash_alg))
    return w.getvalue()


def read_snapshot(data: bytes) -> LedgerState:
    r = Reader(data)
    if r.raw(4) != SNAPSHOT_MAGIC:
        raise EncodingError("bad snapshot magic")
    version = r.u8()
    if version != encoding.SCHEMA_VERSION:
        raise EncodingError(f"unsupported snapshot schema version {version}")
    hash_alg = r.u8()
    if hash_alg not in encoding.HASH_ALGORITHMS:
        raise EncodingError(f"unknown hash algorithm id {hash_alg}")
    r.u16()
    block_count = r.u32()
    r.u32()
    blocks = []
    index: dict[bytes, tuple[int, int]] = {}
    for _ in range(block_count):
        block = block_from_bytes(r.bytes_(), hash_alg)
        for position, tx in enumerate(block.transactions):
            index[tx.tx_id] = (block.height, position)
        blocks.append(block)
    r.expect_end()
    return LedgerState(blocks=tuple(blocks), index=index, hash_alg=hash_alg)
