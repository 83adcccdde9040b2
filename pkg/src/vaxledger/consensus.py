"""Round-robin proof-of-authority replication over a simulated lossy network.

Validators take turns proposing blocks (height mod N); there is no mining.
The simulation is a single-threaded discrete-tick loop, deterministic for a
given seed: message delays and drops come from one seeded RNG consumed in a
fixed order.  Fork choice is longest chain, ties broken by the numerically
smaller head digest.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass

from .encoding import ZERO_DIGEST
from .errors import ChainError, ConfigError, VaxledgerError
from .identity import ActorDirectory, ActorIdentity, Role
from .ledger import (
    Block,
    LedgerState,
    MAX_BLOCK_TRANSACTIONS,
    append_block,
    compute_block_hash,
    header_signing_bytes,
    make_block,
    make_genesis,
    tx_list_digest,
)
from .identity import verify as verify_signature
from .transactions import Transaction, verify_transaction_signature
from .world import ContractEngine, Event, WorldState, new_world, world_digest

PROPOSAL_INTERVAL_TICKS = 10
ANNOUNCE_INTERVAL_TICKS = 5
ANCESTOR_BATCH_LIMIT = 64

DEFAULT_BASE_EPOCH = 1_600_000_000
DEFAULT_TICK_SECONDS = 60


@dataclass(frozen=True)
class ValidatorSet:
    validators: tuple[ActorIdentity, ...]

    def __post_init__(self) -> None:
        if not self.validators:
            raise ConfigError("validator set must be nonempty")
        ids = [v.actor_id for v in self.validators]
        if len(set(ids)) != len(ids):
            raise ConfigError("validator set contains duplicates")
        for validator in self.validators:
            if validator.role != Role.VALIDATOR:
                raise ConfigError(f"{validator.actor_id} does not have the Validator role")

    def __len__(self) -> int:
        return len(self.validators)


def expected_proposer(height: int, validators: ValidatorSet) -> ActorIdentity:
    """Authority rotation: validators[height mod N]."""
    return validators.validators[height % len(validators)]


@dataclass(frozen=True)
class PartitionWindow:
    """During [start_tick, end_tick), messages crossing groups are dropped."""

    start_tick: int
    end_tick: int
    groups: tuple[frozenset[str], ...]

    def blocks_delivery(self, tick: int, sender: str, recipient: str) -> bool:
        if not self.start_tick <= tick < self.end_tick:
            return False
        sender_group = next((i for i, g in enumerate(self.groups) if sender in g), None)
        recipient_group = next(
            (i for i, g in enumerate(self.groups) if recipient in g), None
        )
        return sender_group != recipient_group


@dataclass(frozen=True)
class NetConfig:
    delay_min_ticks: int = 1
    delay_max_ticks: int = 1
    drop_probability: float = 0.0
    seed: int = 0
    partitions: tuple[PartitionWindow, ...] = ()
    base_epoch: int = DEFAULT_BASE_EPOCH
    tick_seconds: int = DEFAULT_TICK_SECONDS

    def __post_init__(self) -> None:
        if self.delay_min_ticks < 0 or self.delay_min_ticks > self.delay_max_ticks:
            raise ConfigError("delay window must satisfy 0 <= min <= max")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ConfigError("drop probability must be within [0, 1]")


@dataclass(frozen=True)
class Message:
    kind: str  # "tx" | "block" | "want"
    sender: str
    recipient: str
    tx: Transaction | None = None
    block: Block | None = None
    from_height: int = 0
    to_height: int = 0


def head_sort_key(height: int, block_hash: bytes) -> tuple[int, int]:
    """Longest chain wins; ties go to the smaller digest as a big integer."""
    return (-height, int.from_bytes(block_hash, "big"))


class Node:
    """One replica: ledger plus world replayed from it, and a mempool."""

    def __init__(
        self,
        node_id: str,
        validator: ActorIdentity,
        validators: ValidatorSet,
        engine: ContractEngine,
        genesis: Block,
        peers: tuple[str, ...],
        net: NetConfig,
    ) -> None:
        self.node_id = node_id
        self.validator = validator
        self.validators = validators
        self.engine = engine
        self.peers = tuple(p for p in peers if p != node_id)
        self.net = net

        self.blocks: dict[bytes, Block] = {genesis.block_hash: genesis}
        self.head_hash = genesis.block_hash
        self.ledger = append_block(LedgerState(), genesis, engine.directory)
        self.world: WorldState = new_world()
        self.events: list[Event] = []
        self.mempool: list[Transaction] = []
        self.seen_tx: set[bytes] = set()
        self.committed_tx: set[bytes] = set()
        self.last_proposal_tick = -PROPOSAL_INTERVAL_TICKS
        self.last_announce_tick = 0
        self.invalid_messages = 0
        self.initial_products = ()

        self._replay_world()

    # -- world maintenance -------------------------------------------------

    def seed_products(self, products) -> None:
        self.initial_products = tuple(products)
        self._replay_world()

    def _queue_alerts(self, new_alerts) -> None:
        for alert in new_alerts:
            tx = self.engine.alert_transaction(alert)
            if tx.tx_id not in self.seen_tx and tx.tx_id not in self.committed_tx:
                self.seen_tx.add(tx.tx_id)
                self.mempool.append(tx)

    def _apply_block_to_world(self, block: Block) -> None:
        for tx in block.transactions:
            before = len(self.world.alerts)
            self.events.extend(self.engine.apply_transaction(self.world, tx))
            self.committed_tx.add(tx.tx_id)
            self._queue_alerts(self.world.alerts[before:])

    def _replay_world(self) -> None:
        self.world = new_world(self.initial_products)
        self.events = []
        self.committed_tx = set()
        for block in self.ledger.blocks:
            self._apply_block_to_world(block)
        self.mempool = [tx for tx in self.mempool if tx.tx_id not in self.committed_tx]

    def world_digest(self) -> bytes:
        return world_digest(self.world, self.ledger.hash_alg)

    # -- chain maintenance ---------------------------------------------------

    def _chain_to(self, block_hash: bytes) -> list[Block] | None:
        chain: list[Block] = []
        cursor = self.blocks.get(block_hash)
        while cursor is not None:
            chain.append(cursor)
            if cursor.prev_hash == ZERO_DIGEST and cursor.height == 0:
                chain.reverse()
                return chain
            cursor = self.blocks.get(cursor.prev_hash)
        return None

    def _leaves(self) -> list[Block]:
        parents = {block.prev_hash for block in self.blocks.values()}
        return [b for b in self.blocks.values() if b.block_hash not in parents]

    def _select_head(self) -> bytes:
        best = None
        for leaf in self._leaves():
            if self._chain_to(leaf.block_hash) is None:
                continue
            key = head_sort_key(leaf.height, leaf.block_hash)
            if best is None or key < best[0]:
                best = (key, leaf.block_hash)
        assert best is not None  # genesis is always present
        return best[1]

    def _validate_block(self, block: Block, parent: Block) -> None:
        """Check one block against its (already validated) parent."""
        if block.height != parent.height + 1:
            raise ChainError("height does not extend parent")
        if block.prev_hash != compute_block_hash(parent, self.ledger.hash_alg):
            raise ChainError("prev_hash does not match parent")
        if block.timestamp < parent.timestamp:
            raise ChainError("timestamp before parent")
        if len(block.transactions) > MAX_BLOCK_TRANSACTIONS:
            raise ChainError("block over capacity")
        proposer = expected_proposer(block.height, self.validators)
        if block.proposer != proposer.actor_id:
            raise ChainError(
                f"height {block.height} belongs to {proposer.actor_id}, "
                f"not {block.proposer}"
            )
        message = header_signing_bytes(
            block.height,
            block.prev_hash,
            block.timestamp,
            tx_list_digest(block.transactions, self.ledger.hash_alg),
            self.ledger.hash_alg,
        )
        if not verify_signature(proposer.public_key, message, block.signature):
            raise ChainError("bad proposer signature")
        seen = set()
        for tx in block.transactions:
            if tx.tx_id in seen:
                raise ChainError("duplicate transaction within block")
            seen.add(tx.tx_id)
            author_key = self.engine.directory.public_key(tx.author)
            if author_key is None or not verify_transaction_signature(tx, author_key):
                raise ChainError("bad transaction signature")

    def _adopt_head(self, new_head: bytes) -> bool:
        if new_head == self.head_hash:
            return True
        chain = self._chain_to(new_head)
        assert chain is not None
        old_head = self.blocks[self.head_hash]
        new_block = self.blocks[new_head]
        if new_block.prev_hash == old_head.block_hash:
            try:
                self.ledger = append_block(self.ledger, new_block, self.engine.directory)
            except VaxledgerError:
                return False
            self.head_hash = new_head
            self._apply_block_to_world(new_block)
            self.mempool = [
                tx for tx in self.mempool if tx.tx_id not in self.committed_tx
            ]
            return True
        rebuilt = LedgerState(hash_alg=self.ledger.hash_alg)
        try:
            for block in chain:
                rebuilt = append_block(rebuilt, block, self.engine.directory)
        except VaxledgerError:
            return False
        self.head_hash = new_head
        self.ledger = rebuilt
        self._replay_world()
        return True

    # -- message handling ------------------------------------------------------

    def accept_transaction(self, tx: Transaction) -> bool:
        if tx.tx_id in self.seen_tx or tx.tx_id in self.committed_tx:
            return False
        author_key = self.engine.directory.public_key(tx.author)
        if author_key is None:
            self.invalid_messages += 1
            return False
        from .transactions import verify_transaction_signature

        if not verify_transaction_signature(tx, author_key):
            self.invalid_messages += 1
            return False
        self.seen_tx.add(tx.tx_id)
        self.mempool.append(tx)
        return True

    def _accept_block(self, block: Block, sender: str, outbound: list[Message]) -> None:
        if block.block_hash in self.blocks:
            return
        parent = self.blocks.get(block.prev_hash)
        if parent is None:
            # Gap: ask the sender for the missing ancestors; the orphan itself
            # will be re-announced once they arrive.
            head_height = self.blocks[self.head_hash].height
            if sender != self.node_id:
                outbound.append(
                    Message(
                        kind="want",
                        sender=self.node_id,
                        recipient=sender,
                        from_height=head_height + 1,
                        to_height=max(block.height - 1, head_height + 1),
                    )
                )
            return
        try:
            self._validate_block(block, parent)
        except VaxledgerError:
            self.invalid_messages += 1
            return
        self.blocks[block.block_hash] = block
        if not self._adopt_head(self._select_head()):
            del self.blocks[block.block_hash]
            self.invalid_messages += 1
            return
        for peer in self.peers:
            if peer != sender:
                outbound.append(
                    Message(kind="block", sender=self.node_id, recipient=peer, block=block)
                )

    def _serve_want(self, message: Message, outbound: list[Message]) -> None:
        chain = self.ledger.blocks
        lo = max(message.from_height, 0)
        hi = min(message.to_height, len(chain) - 1)
        for height in range(lo, min(hi, lo + ANCESTOR_BATCH_LIMIT - 1) + 1):
            outbound.append(
                Message(
                    kind="block",
                    sender=self.node_id,
                    recipient=message.sender,
                    block=chain[height],
                )
            )

    def _maybe_propose(self, tick: int, outbound: list[Message]) -> None:
        next_height = self.blocks[self.head_hash].height + 1
        if expected_proposer(next_height, self.validators).actor_id != self.validator.actor_id:
            return
        if tick - self.last_proposal_tick < PROPOSAL_INTERVAL_TICKS:
            return
        pending = [tx for tx in self.mempool if tx.tx_id not in self.committed_tx]
        if not pending:
            return
        head = self.blocks[self.head_hash]
        timestamp = max(
            self.net.base_epoch + tick * self.net.tick_seconds, head.timestamp
        )
        block = make_block(
            height=next_height,
            prev_hash=head.block_hash,
            timestamp=timestamp,
            transactions=tuple(pending[:MAX_BLOCK_TRANSACTIONS]),
            proposer=self.validator,
            hash_alg=self.ledger.hash_alg,
        )
        self.last_proposal_tick = tick
        self._accept_block(block, self.node_id, outbound)

    def step(self, inbox: list[Message], tick: int) -> list[Message]:
        """Process one tick: inbox, proposal turn, periodic head re-announce."""
        outbound: list[Message] = []
        for message in inbox:
            if message.kind == "tx" and message.tx is not None:
                if self.accept_transaction(message.tx):
                    for peer in self.peers:
                        if peer != message.sender:
                            outbound.append(
                                Message(
                                    kind="tx",
                                    sender=self.node_id,
                                    recipient=peer,
                                    tx=message.tx,
                                )
                            )
            elif message.kind == "block" and message.block is not None:
                self._accept_block(message.block, message.sender, outbound)
            elif message.kind == "want":
                self._serve_want(message, outbound)
            else:
                self.invalid_messages += 1

        self._maybe_propose(tick, outbound)

        if tick - self.last_announce_tick >= ANNOUNCE_INTERVAL_TICKS:
            self.last_announce_tick = tick
            head = self.blocks[self.head_hash]
            if head.height > 0:
                for peer in self.peers:
                    outbound.append(
                        Message(kind="block", sender=self.node_id, recipient=peer, block=head)
                    )
            # Re-gossip pending transactions so drops cannot starve the
            # validator whose proposal turn it is.
            for tx in self.mempool:
                for peer in self.peers:
                    outbound.append(
                        Message(kind="tx", sender=self.node_id, recipient=peer, tx=tx)
                    )
        return outbound


@dataclass(frozen=True)
class ScenarioTx:
    tick: int
    origin: str
    tx: Transaction


@dataclass(frozen=True)
class NodeReport:
    node_id: str
    head_hash: str
    height: int
    committed_transactions: int
    mempool_size: int
    messages_sent: int
    messages_dropped: int
    invalid_messages: int


@dataclass(frozen=True)
class SimReport:
    nodes: tuple[NodeReport, ...]
    converged: bool
    ticks_run: int
    seed: int

    def to_text(self) -> str:
        lines = [
            f"simulation: ticks={self.ticks_run} seed={self.seed} "
            f"converged={'yes' if self.converged else 'no'}"
        ]
        for node in self.nodes:
            lines.append(
                f"node {node.node_id}: head={node.head_hash} height={node.height} "
                f"committed={node.committed_transactions} mempool={node.mempool_size} "
                f"sent={node.messages_sent} dropped={node.messages_dropped} "
                f"invalid={node.invalid_messages}"
            )
        return "\n".join(lines) + "\n"


def build_cluster(
    node_count: int,
    validators: ValidatorSet,
    engine_factory,
    net: NetConfig,
    products=(),
) -> list[Node]:
    """One node per validator index (node i is operated by validators[i % N])."""
    if node_count < 1:
        raise ConfigError("need at least one node")
    genesis_proposer = expected_proposer(0, validators)
    genesis = make_genesis(genesis_proposer, timestamp=net.base_epoch)
    node_ids = tuple(f"n{i}" for i in range(node_count))
    nodes = []
    for i, node_id in enumerate(node_ids):
        engine = engine_factory()
        node = Node(
            node_id=node_id,
            validator=validators.validators[i % len(validators)],
            validators=validators,
            engine=engine,
            genesis=genesis,
            peers=node_ids,
            net=net,
        )
        node.seed_products(products)
        nodes.append(node)
    return nodes


def run_simulation(
    nodes: list[Node],
    net: NetConfig,
    scenario_txs: list[ScenarioTx],
    max_ticks: int,
    quiescence_ticks: int = 50,
) -> SimReport:
    """Discrete-tick loop: deliver, inject, step; deterministic per seed."""
    rng = random.Random(net.seed)
    by_id = {node.node_id: node for node in nodes}
    inflight: list[tuple[int, int, Message]] = []
    sequence = 0
    sent: dict[str, int] = {node.node_id: 0 for node in nodes}
    dropped: dict[str, int] = {node.node_id: 0 for node in nodes}
    injections = sorted(scenario_txs, key=lambda item: item.tick)
    injection_index = 0
    idle_ticks = 0
    ticks_run = 0

    def route(message: Message, tick: int) -> None:
        nonlocal sequence
        sent[message.sender] += 1
        if any(
            window.blocks_delivery(tick, message.sender, message.recipient)
            for window in net.partitions
        ):
            dropped[message.sender] += 1
            return
        if net.drop_probability > 0 and rng.random() < net.drop_probability:
            dropped[message.sender] += 1
            return
        delay = rng.randint(net.delay_min_ticks, net.delay_max_ticks)
        sequence += 1
        heapq.heappush(inflight, (tick + 1 + delay, sequence, message))

    for tick in range(max_ticks):
        ticks_run = tick + 1
        inboxes: dict[str, list[Message]] = {node.node_id: [] for node in nodes}
        while inflight and inflight[0][0] <= tick:
            _, _, message = heapq.heappop(inflight)
            if message.recipient in inboxes:
                inboxes[message.recipient].append(message)

        while (
            injection_index < len(injections)
            and injections[injection_index].tick <= tick
        ):
            item = injections[injection_index]
            injection_index += 1
            origin = by_id.get(item.origin)
            if origin is None:
                raise ConfigError(f"unknown origin node {item.origin!r}")
            inboxes[item.origin].append(
                Message(kind="tx", sender=item.origin, recipient=item.origin, tx=item.tx)
            )

        for node in nodes:
            for message in node.step(inboxes[node.node_id], tick):
                route(message, tick)

        # Periodic re-announcements keep some traffic in flight forever, so
        # quiescence ignores it: once injections are done, mempools are empty
        # and heads agree for a while, nothing business-relevant can change.
        heads = {node.head_hash for node in nodes}
        busy = (
            injection_index < len(injections)
            or any(node.mempool for node in nodes)
            or len(heads) != 1
        )
        idle_ticks = 0 if busy else idle_ticks + 1
        if idle_ticks >= quiescence_ticks:
            break

    heads = {node.head_hash for node in nodes}
    worlds = {node.world_digest() for node in nodes}
    converged = len(heads) == 1 and len(worlds) == 1
    reports = tuple(
        NodeReport(
            node_id=node.node_id,
            head_hash=node.blocks[node.head_hash].block_hash.hex(),
            height=node.blocks[node.head_hash].height,
            committed_transactions=len(node.committed_tx),
            mempool_size=len(node.mempool),
            messages_sent=sent[node.node_id],
            messages_dropped=dropped[node.node_id],
            invalid_messages=node.invalid_messages,
        )
        for node in nodes
    )
    return SimReport(nodes=reports, converged=converged, ticks_run=ticks_run, seed=net.seed)
