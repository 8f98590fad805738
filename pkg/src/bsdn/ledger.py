"""Append-only, hash-chained, quorum-voted block ledger.

Blocks are hashed over a canonical encoding of everything except the votes.
Each vote carries an attestation digest binding the voter to the block hash,
so a vote list cannot be edited or moved to another block without detection.
Snapshot files are ``b"BSDN" + b"\\x01"`` followed by frames of a 4-byte
big-endian length and one encoded block.
"""

from __future__ import annotations

import enum
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterable, NamedTuple, Optional, Sequence, Union

from . import access, flowtable, loadbal
from .codec import DecodeError, decode, encode, expect, expect_list
from .core import ZERO_DIGEST, Decision, sha256
from .state import GenesisPayload, WorldState

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"BSDN"
SNAPSHOT_VERSION = 1
DEFAULT_BLOCK_INTERVAL = 1.0
DEFAULT_BLOCK_MAX = 64


class TxKind(enum.Enum):
    FlowRuleUpdate = "FlowRuleUpdate"
    PolicyCreation = "PolicyCreation"
    PolicyUpdate = "PolicyUpdate"
    RightTransfer = "RightTransfer"
    AccessGrant = "AccessGrant"
    LoadAdmit = "LoadAdmit"
    LoadRelease = "LoadRelease"
    Genesis = "Genesis"


PAYLOAD_TYPES = {
    TxKind.FlowRuleUpdate: flowtable.FlowRuleUpdatePayload,
    TxKind.PolicyCreation: access.PolicyCreationPayload,
    TxKind.PolicyUpdate: access.PolicyUpdatePayload,
    TxKind.RightTransfer: access.RightTransferPayload,
    TxKind.AccessGrant: access.AccessGrantPayload,
    TxKind.LoadAdmit: loadbal.LoadAdmitPayload,
    TxKind.LoadRelease: loadbal.LoadReleasePayload,
    TxKind.Genesis: GenesisPayload,
}

# kinds only a controller (server) may issue
SERVER_KINDS = {TxKind.FlowRuleUpdate, TxKind.AccessGrant, TxKind.LoadAdmit, TxKind.LoadRelease}


class InvalidChainError(ValueError):
    pass


class SnapshotFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Transaction:
    id: int
    kind: TxKind
    issuer: str
    payload: Any
    sim_time: float = 0.0

    def __post_init__(self):
        if self.sim_time < 0:
            raise ValueError("sim_time must be non-negative")

    def to_value(self) -> list:
        return [self.id, self.kind.value, self.issuer, self.payload.to_value(), float(self.sim_time)]

    @classmethod
    def from_value(cls, v) -> "Transaction":
        tid, kind, issuer, payload, t = expect_list(v, 5, "transaction")
        try:
            kind = TxKind(expect(kind, str, "kind"))
        except ValueError as exc:
            raise DecodeError(f"unknown transaction kind {kind!r}") from exc
        try:
            return cls(expect(tid, int, "tx id"), kind, expect(issuer, str, "issuer"),
                       PAYLOAD_TYPES[kind].from_value(payload), expect(t, float, "sim_time"))
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc


class Vote(NamedTuple):
    controller: str
    attestation: bytes


def vote_attestation(controller: str, block_digest: bytes) -> bytes:
    return sha256(b"BSDN-vote\x00" + controller.encode() + b"\x00" + block_digest)


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    timestamp: float
    transactions: tuple[Transaction, ...]
    proposer: str
    votes: tuple[Vote, ...] = ()

    def header_value(self) -> list:
        return [self.index, self.prev_hash, float(self.timestamp),
                [tx.to_value() for tx in self.transactions], self.proposer]

    @cached_property
    def digest(self) -> bytes:
        return sha256(encode(self.header_value()))

    @property
    def voters(self) -> frozenset[str]:
        return frozenset(v.controller for v in self.votes)

    def with_votes(self, voters: Iterable[str]) -> "Block":
        h = self.digest
        return replace(self, votes=tuple(Vote(c, vote_attestation(c, h)) for c in sorted(set(voters))))


def hash_block(block: Block) -> bytes:
    return block.digest


def encode_block(block: Block) -> bytes:
    return encode([block.header_value(), [[v.controller, v.attestation] for v in block.votes]])


def decode_block(record: bytes) -> Block:
    header, votes = expect_list(decode(record), 2, "block")
    index, prev, ts, txs, proposer = expect_list(header, 5, "block header")
    vs = []
    for v in expect_list(votes, None, "votes"):
        c, att = expect_list(v, 2, "vote")
        vs.append(Vote(expect(c, str, "voter"), expect(att, bytes, "attestation")))
    return Block(
        expect(index, int, "index"),
        expect(prev, bytes, "prev_hash"),
        expect(ts, float, "timestamp"),
        tuple(Transaction.from_value(t) for t in expect_list(txs, None, "transactions")),
        expect(proposer, str, "proposer"),
        tuple(vs),
    )


def quorum(n_controllers: int) -> int:
    return n_controllers // 2 + 1


def designated_proposer(controllers: Sequence[str], index: int, view: int = 0) -> str:
    return controllers[(index + view) % len(controllers)]


# --- transaction semantics ---------------------------------------------------

def validate_transaction(tx: Transaction, state: WorldState) -> Decision:
    if tx.kind is TxKind.Genesis:
        return Decision.reject("genesis_only", str(tx.id))
    if tx.id in state.tx_ids:
        return Decision.reject("duplicate_tx", str(tx.id))
    if not state.is_registered(tx.issuer):
        return Decision.reject("unknown_issuer", tx.issuer)
    if type(tx.payload) is not PAYLOAD_TYPES[tx.kind]:
        return Decision.reject("kind_mismatch", f"{tx.kind.value} with {type(tx.payload).__name__}")
    if tx.kind in SERVER_KINDS and state.nodes.get(tx.issuer) != "controller":
        return Decision.reject("not_server", tx.issuer)
    p = tx.payload
    if tx.kind is TxKind.FlowRuleUpdate:
        return flowtable.check_update(p, state)
    if tx.kind in (TxKind.PolicyCreation, TxKind.PolicyUpdate):
        return access.check_policy_op(p, state, tx.issuer)
    if tx.kind is TxKind.RightTransfer:
        return access.check_transfer(p, state, tx.issuer)
    if tx.kind is TxKind.AccessGrant:
        return access.check_grant(p, state)
    if tx.kind is TxKind.LoadAdmit:
        return loadbal.check_admit(p, state)
    return loadbal.check_release(p, state)


def apply_transaction(state: WorldState, tx: Transaction) -> None:
    """Apply an already-validated transaction in place."""
    p = tx.payload
    k = tx.kind
    if k is TxKind.FlowRuleUpdate:
        new = flowtable.apply_update(state.flow_tables[p.switch_id], p)
        state.flow_tables[p.switch_id] = new
        state.table_hashes[p.switch_id].append(flowtable.table_hash(new))
    elif k is TxKind.PolicyCreation:
        state.policies[p.policy.policy_id] = p.policy
        state.right_holders[p.policy.policy_id] = p.policy.owner
    elif k is TxKind.PolicyUpdate:
        old = state.policies[p.policy_id]
        state.policies[p.policy_id] = replace(
            old, required_attrs=p.required_attrs, allowed_tasks=p.allowed_tasks, active=p.active
        )
    elif k is TxKind.RightTransfer:
        state.right_holders[p.policy_id] = p.to_user
    elif k is TxKind.AccessGrant:
        state.grants[p.request_id] = p.policy_id
    elif k is TxKind.LoadAdmit:
        loadbal.apply_admit(p, state, tx.sim_time)
    elif k is TxKind.LoadRelease:
        loadbal.apply_release(p, state)
    state.tx_ids.add(tx.id)


def genesis_state(block: Block) -> WorldState:
    if len(block.transactions) != 1 or block.transactions[0].kind is not TxKind.Genesis:
        raise InvalidChainError("genesis block must hold exactly one Genesis transaction")
    try:
        state = WorldState.from_genesis(block.transactions[0].payload)
    except (ValueError, KeyError) as exc:
        raise InvalidChainError(f"genesis content rejected: {exc}") from exc
    state.tx_ids.add(block.transactions[0].id)
    return state


def apply_block(state: WorldState, block: Block) -> None:
    for tx in block.transactions:
        d = validate_transaction(tx, state)
        if not d:
            raise InvalidChainError(f"block {block.index}: invalid_tx:{tx.id} ({d.reason})")
        apply_transaction(state, tx)
    state.height = block.index


def make_genesis(payload: GenesisPayload, timestamp: float = 0.0) -> Block:
    ctrl = payload.controllers
    tx = Transaction(0, TxKind.Genesis, ctrl[0], payload, float(timestamp))
    return Block(0, ZERO_DIGEST, float(timestamp), (tx,), ctrl[0]).with_votes(ctrl)


# --- chain verification ------------------------------------------------------

def _check_votes(block: Block, controllers: Sequence[str]) -> Optional[str]:
    names = [v.controller for v in block.votes]
    if names != sorted(set(names)):
        return "bad_vote_order"
    h = block.digest
    for v in block.votes:
        if v.controller not in controllers:
            return f"unknown_voter:{v.controller}"
        if v.attestation != vote_attestation(v.controller, h):
            return f"bad_attestation:{v.controller}"
    if len(block.votes) < quorum(len(controllers)):
        return "insufficient_quorum"
    return None


def _check_chain(chain: Sequence[Block]) -> tuple[Decision, Optional[WorldState]]:
    if not chain:
        return Decision.reject("break_at:0", "empty_chain"), None
    g = chain[0]
    if g.index != 0 or g.prev_hash != ZERO_DIGEST:
        return Decision.reject("break_at:0", "bad_genesis_header"), None
    try:
        state = genesis_state(g)
    except InvalidChainError:
        return Decision.reject("break_at:0", "bad_genesis_content"), None
    controllers = state.controllers
    if g.proposer != controllers[0]:
        return Decision.reject("break_at:0", "bad_proposer"), None
    problem = _check_votes(g, controllers)
    if problem:
        return Decision.reject("break_at:0", problem), None
    prev = g
    for i, block in enumerate(chain[1:], start=1):
        at = f"break_at:{i}"
        if block.index != i:
            return Decision.reject(at, f"index_mismatch:{block.index}"), None
        if block.prev_hash != prev.digest:
            return Decision.reject(at, "prev_hash_mismatch"), None
        if block.timestamp < prev.timestamp:
            return Decision.reject(at, "timestamp_regression"), None
        if block.proposer not in controllers:
            return Decision.reject(at, "bad_proposer"), None
        problem = _check_votes(block, controllers)
        if problem:
            return Decision.reject(at, problem), None
        if not block.transactions:
            return Decision.reject(at, "empty_block"), None
        for tx in block.transactions:
            try:
                d = validate_transaction(tx, state)
                if d:
                    apply_transaction(state, tx)
            except (ValueError, KeyError) as exc:
                d = Decision.reject("malformed", str(exc))
            if not d:
                return Decision.reject(at, f"invalid_tx:{tx.id}:{d.reason}"), None
        state.height = i
        prev = block
    return Decision.accept(str(len(chain))), state


def verify_chain(chain: Union["Ledger", Sequence[Block]]) -> Decision:
    if isinstance(chain, Ledger):
        chain = chain.chain
    return _check_chain(chain)[0]


def replay(chain: Sequence[Block], start: Optional[WorldState] = None) -> WorldState:
    """Replay a verified chain. With ``start``, ``chain`` is a suffix applied on top of it."""
    if start is None:
        d, state = _check_chain(chain)
        if not d:
            raise InvalidChainError(f"invalid_chain: {d}")
        return state
    state = start.copy()
    for block in chain:
        if block.index != state.height + 1:
            raise InvalidChainError(f"invalid_chain: suffix starts at {block.index}, state at {state.height}")
        apply_block(state, block)
    return state


# --- the replicated ledger ---------------------------------------------------

@dataclass
class Ledger:
    chain: list[Block]
    block_interval: float = DEFAULT_BLOCK_INTERVAL
    block_max: int = DEFAULT_BLOCK_MAX
    pending: list[Transaction] = field(default_factory=list)
    submitted: list[Transaction] = field(default_factory=list)
    rejected: list[tuple[Transaction, str]] = field(default_factory=list)
    view: int = 0

    def __post_init__(self):
        d, state = _check_chain(self.chain)
        if not d:
            raise InvalidChainError(str(d))
        self.state: WorldState = state
        self.controllers: tuple[str, ...] = state.controllers
        self.last_seal_time: float = self.chain[-1].timestamp

    @classmethod
    def create(cls, genesis: GenesisPayload, timestamp: float = 0.0, **kw) -> "Ledger":
        return cls([make_genesis(genesis, timestamp)], **kw)

    @property
    def tip(self) -> Block:
        return self.chain[-1]

    @property
    def height(self) -> int:
        return len(self.chain) - 1

    @property
    def quorum(self) -> int:
        return quorum(len(self.controllers))

    def proposer_for(self, index: Optional[int] = None) -> str:
        return designated_proposer(self.controllers, len(self.chain) if index is None else index, self.view)

    def submit(self, tx: Transaction) -> None:
        self.pending.append(tx)
        self.submitted.append(tx)

    def seal_due(self, now: float) -> bool:
        return bool(self.pending) and (
            now - self.last_seal_time >= self.block_interval or len(self.pending) >= self.block_max
        )


def seal_block(ledger: Ledger, now: float, proposer: Optional[str] = None) -> Optional[Block]:
    """Build a candidate from valid pending transactions; invalid ones are dropped."""
    if not ledger.seal_due(now):
        return None
    scratch = ledger.state.copy()
    keep = []
    for tx in list(ledger.pending):
        d = validate_transaction(tx, scratch)
        if d:
            apply_transaction(scratch, tx)
            keep.append(tx)
        else:
            log.debug("dropping tx %d (%s): %s", tx.id, tx.kind.value, d)
            ledger.pending.remove(tx)
            ledger.rejected.append((tx, d.reason))
    if not keep:
        return None
    index = len(ledger.chain)
    return Block(index, ledger.tip.digest, float(now), tuple(keep), proposer or ledger.proposer_for(index))


def validate_candidate(ledger: Ledger, candidate: Block) -> Decision:
    """What an honest controller checks before voting."""
    if candidate.index != len(ledger.chain) or candidate.prev_hash != ledger.tip.digest:
        return Decision.reject("bad_prev_hash")
    if candidate.proposer not in ledger.controllers:
        return Decision.reject("bad_proposer", candidate.proposer)
    if not candidate.transactions:
        return Decision.reject("empty_block")
    scratch = ledger.state.copy()
    for tx in candidate.transactions:
        d = validate_transaction(tx, scratch)
        if not d:
            return Decision.reject(f"invalid_tx:{tx.id}", d.reason)
        apply_transaction(scratch, tx)
    return Decision.accept()


def vote_and_append(ledger: Ledger, candidate: Block, votes: Iterable[str]) -> Decision:
    votes = set(votes)
    d = validate_candidate(ledger, candidate)
    if not d:
        return d
    unknown = votes - set(ledger.controllers)
    if unknown:
        return Decision.reject("unknown_voter", ",".join(sorted(unknown)))
    if len(votes) < ledger.quorum:
        return Decision.reject("insufficient_quorum", f"{len(votes)} < {ledger.quorum}")
    block = candidate.with_votes(votes)
    state = ledger.state.copy()
    apply_block(state, block)
    ledger.chain.append(block)
    ledger.state = state
    included = {tx.id for tx in block.transactions}
    ledger.pending = [tx for tx in ledger.pending if tx.id not in included]
    ledger.last_seal_time = block.timestamp
    ledger.view = 0
    return Decision.accept(str(block.index))


# --- snapshots ---------------------------------------------------------------

_U32 = struct.Struct(">I")


def snapshot_bytes(chain: Sequence[Block]) -> bytes:
    out = bytearray(SNAPSHOT_MAGIC + bytes([SNAPSHOT_VERSION]))
    for block in chain:
        rec = encode_block(block)
        out += _U32.pack(len(rec)) + rec
    return bytes(out)


def write_snapshot(path, chain: Sequence[Block]) -> None:
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".snap-")
    with os.fdopen(fd, "wb") as f:
        f.write(snapshot_bytes(chain))
    os.replace(tmp, path)


def split_snapshot(data: bytes) -> list[bytes]:
    """Frame records; bad magic/version or truncation raise SnapshotFormatError."""
    head = len(SNAPSHOT_MAGIC) + 1
    if len(data) < head or data[:4] != SNAPSHOT_MAGIC:
        raise SnapshotFormatError("missing BSDN magic")
    if data[4] != SNAPSHOT_VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {data[4]}")
    records, pos = [], head
    while pos < len(data):
        if pos + 4 > len(data):
            raise SnapshotFormatError(f"truncated frame header at offset {pos}")
        (n,) = _U32.unpack_from(data, pos)
        pos += 4
        if pos + n > len(data):
            raise SnapshotFormatError(f"truncated block record at offset {pos}")
        records.append(data[pos:pos + n])
        pos += n
    if not records:
        raise SnapshotFormatError("snapshot holds no blocks")
    return records


def verify_records(records: Sequence[bytes]) -> tuple[Decision, Optional[WorldState]]:
    blocks = []
    for i, rec in enumerate(records):
        try:
            blocks.append(decode_block(rec))
        except (DecodeError, ValueError) as exc:
            return Decision.reject(f"break_at:{i}", f"decode_error:{exc}"), None
    return _check_chain(blocks)


def read_snapshot(path) -> list[Block]:
    with open(path, "rb") as f:
        records = split_snapshot(f.read())
    d, _ = verify_records(records)
    if not d:
        raise InvalidChainError(str(d))
    return [decode_block(r) for r in records]
