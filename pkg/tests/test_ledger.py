import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdn.access import AccessPolicy, PolicyCreationPayload, RightTransferPayload
from bsdn.codec import encode
from bsdn.core import ZERO_DIGEST, sha256
from bsdn.flowtable import FlowEntry, FlowOp, FlowRuleUpdatePayload
from bsdn.ledger import (
    Block,
    InvalidChainError,
    Ledger,
    SnapshotFormatError,
    Transaction,
    TxKind,
    decode_block,
    encode_block,
    hash_block,
    make_genesis,
    quorum,
    read_snapshot,
    replay,
    seal_block,
    snapshot_bytes,
    split_snapshot,
    validate_transaction,
    verify_chain,
    verify_records,
    vote_and_append,
    write_snapshot,
)
from bsdn.loadbal import LoadAdmitPayload
from bsdn.state import state_digest

from conftest import CONTROLLERS, Chain, random_chain, small_genesis


def test_genesis_shape():
    g = make_genesis(small_genesis())
    assert g.index == 0 and g.prev_hash == ZERO_DIGEST
    assert hash_block(g) == hash_block(make_genesis(small_genesis()))


def test_hash_is_sha256_of_header_encoding(chain):
    b = chain.commit(chain.flow_add("s1", 1))
    assert hash_block(b) == sha256(encode([b.index, b.prev_hash, b.timestamp,
                                           [tx.to_value() for tx in b.transactions], b.proposer]))


def test_one_tx_id_changes_digest(chain):
    b = chain.commit(chain.flow_add("s1", 1))
    tx = b.transactions[0]
    other = replace(b, transactions=(replace(tx, id=tx.id + 1),), votes=())
    assert encode(other.header_value()) != encode(b.header_value())
    assert hash_block(other) != hash_block(b)


def test_votes_do_not_change_digest(chain):
    b = chain.commit(chain.flow_add("s1", 1))
    assert hash_block(b.with_votes(["c1"])) == hash_block(b.with_votes(["c1", "c2"])) == hash_block(b)


def test_quorum_threshold():
    assert [quorum(n) for n in (1, 2, 3, 4, 5, 6, 7)] == [1, 2, 2, 3, 3, 4, 4]


# --- validation ----------------------------------------------------------------

def test_flow_update_at_current_version_accepted(chain):
    assert validate_transaction(chain.flow_add("s1", 1), chain.ledger.state)


def test_unknown_issuer_rejected(chain):
    tx = replace(chain.flow_add("s1", 1), issuer="mallory")
    assert validate_transaction(tx, chain.ledger.state).reason == "unknown_issuer"


def test_kind_mismatch_rejected(chain):
    tx = Transaction(99, TxKind.RightTransfer, "alice", chain.flow_add("s1", 1).payload)
    assert validate_transaction(tx, chain.ledger.state).reason == "kind_mismatch"


def test_transfer_by_non_holder_rejected(chain):
    tx = chain.tx(TxKind.RightTransfer, "bob", RightTransferPayload("p1", "bob", "carol"))
    assert validate_transaction(tx, chain.ledger.state).reason == "not_right_holder"


def test_over_capacity_admit_rejected():
    c = Chain(small_genesis(devices=(("d1", 2), ("d2", 4))))
    rid, g, a = c.request("alice", "d1", "write", "p1")  # cost 3 > capacity 2
    c.commit(g)
    assert validate_transaction(a, c.ledger.state).reason == "over_capacity"


def test_server_kinds_need_controller_issuer(chain):
    tx = replace(chain.flow_add("s1", 1), issuer="alice")
    assert validate_transaction(tx, chain.ledger.state).reason == "not_server"


def test_duplicate_tx_id_rejected(chain):
    tx = chain.flow_add("s1", 1)
    chain.commit(tx)
    again = replace(chain.flow_add("s1", 2), id=tx.id)
    assert validate_transaction(again, chain.ledger.state).reason == "duplicate_tx"


# --- sealing and voting -------------------------------------------------------

def test_seal_empty_pool(chain):
    assert seal_block(chain.ledger, 5.0) is None


def test_seal_waits_for_interval(chain):
    chain.ledger.submit(chain.flow_add("s1", 1))
    assert seal_block(chain.ledger, 0.5) is None
    assert seal_block(chain.ledger, 1.0) is not None


def test_seal_on_block_max():
    c = Chain(block_max=2)
    c.ledger.submit(c.flow_add("s1", 1))
    c.ledger.submit(c.flow_add("s2", 1))
    assert seal_block(c.ledger, 0.1) is not None


def test_seal_keeps_arrival_order(chain):
    txs = [chain.flow_add(sw, 1) for sw in ("s3", "s1", "s2")]
    for tx in txs:
        chain.ledger.submit(tx)
    b = seal_block(chain.ledger, 1.0)
    assert [tx.id for tx in b.transactions] == sorted(tx.id for tx in txs)


def test_seal_drops_invalid(chain):
    good1, good2 = chain.flow_add("s1", 1), chain.flow_add("s2", 1)
    bad = replace(chain.flow_add("s3", 1), issuer="mallory")
    for tx in (good1, bad, good2):
        chain.ledger.submit(tx)
    b = seal_block(chain.ledger, 1.0)
    kept = [tx for tx in (good1, bad, good2) if validate_transaction(tx, chain.ledger.state)]
    assert b.transactions == tuple(kept) == (good1, good2)
    assert [(tx.id, r) for tx, r in chain.ledger.rejected] == [(bad.id, "unknown_issuer")]
    assert bad not in chain.ledger.pending


def test_seal_drops_later_conflicting_update(chain):
    # both built on version 1: only the first can apply
    a, b = chain.flow_add("s1", 1), chain.flow_add("s1", 2)
    chain.ledger.submit(a)
    chain.ledger.submit(b)
    blk = seal_block(chain.ledger, 1.0)
    assert blk.transactions == (a,)
    assert chain.ledger.rejected[0][1] == "stale_base"


def _candidate(c: Chain):
    c.ledger.submit(c.flow_add("s1", 1))
    return seal_block(c.ledger, 1.0)


def test_four_of_six_votes_append(chain):
    cand = _candidate(chain)
    assert vote_and_append(chain.ledger, cand, CONTROLLERS[:4])
    assert chain.ledger.height == 1 and not chain.ledger.pending


def test_three_of_six_votes_rejected(chain):
    cand = _candidate(chain)
    assert vote_and_append(chain.ledger, cand, CONTROLLERS[:3]).reason == "insufficient_quorum"
    assert chain.ledger.height == 0


def test_stale_prev_hash_rejected(chain):
    cand = _candidate(chain)
    chain.commit(chain.flow_add("s2", 1))
    assert vote_and_append(chain.ledger, cand, CONTROLLERS).reason == "bad_prev_hash"


def test_unknown_voter_rejected(chain):
    assert vote_and_append(chain.ledger, _candidate(chain), [*CONTROLLERS[:4], "zed"]).reason == "unknown_voter"


def test_append_revalidates_transactions(chain):
    cand = _candidate(chain)
    forged = replace(cand, transactions=(replace(cand.transactions[0], issuer="mallory"),))
    assert vote_and_append(chain.ledger, forged, CONTROLLERS).reason.startswith("invalid_tx:")


def test_proposer_rotates(chain):
    seen = []
    for i in range(6):
        seen.append(chain.commit(chain.flow_add("s1", i + 1)).proposer)
    assert seen == ["c2", "c3", "c4", "c5", "c6", "c1"]


# --- verification and replay -------------------------------------------------

def test_untouched_ten_block_chain_verifies():
    c = random_chain(random.Random(1), 10)
    assert verify_chain(c.ledger)


def test_flip_in_block_four_detected():
    c = random_chain(random.Random(2), 6)
    records = [encode_block(b) for b in c.ledger.chain]
    rec = bytearray(records[4])
    # flip a byte inside the first transaction payload region
    pos = len(rec) // 2
    rec[pos] ^= 0xFF
    records[4] = bytes(rec)
    d, _ = verify_records(records)
    assert not d and d.reason in ("break_at:4", "break_at:5")


def test_deleted_middle_block_detected():
    c = random_chain(random.Random(3), 6)
    chain = c.ledger.chain[:3] + c.ledger.chain[4:]
    assert verify_chain(chain).reason == "break_at:3"


def test_tip_tamper_detected():
    c = random_chain(random.Random(4), 3)
    tip = c.ledger.chain[-1]
    forged = replace(tip, timestamp=tip.timestamp + 1)  # stale votes no longer attest
    assert verify_chain(c.ledger.chain[:-1] + [forged]).reason == "break_at:3"


def test_under_quorum_block_never_verifies(chain):
    chain.commit(chain.flow_add("s1", 1))
    tip = chain.ledger.tip
    weak = tip.with_votes(CONTROLLERS[:3])
    d = verify_chain(chain.ledger.chain[:-1] + [weak])
    assert not d and "insufficient_quorum" in d.detail


def test_replay_genesis_only():
    state = replay([make_genesis(small_genesis())])
    assert all(t.version == 1 for t in state.flow_tables.values())
    assert set(state.policies) == {"p1", "p2"}


def test_replay_one_flow_update(chain):
    chain.commit(chain.flow_add("s2", 1))
    assert replay(chain.ledger.chain).flow_tables["s2"].version == 2


def test_replay_creation_then_transfer(chain):
    p = AccessPolicy("p9", "carol", "d2", (), ("read",))
    chain.commit(chain.create_policy(p))
    chain.commit(chain.transfer("p9", "carol", "alice"))
    assert replay(chain.ledger.chain).right_holders["p9"] == "alice"


def test_replay_rejects_invalid_chain():
    c = random_chain(random.Random(5), 3)
    with pytest.raises(InvalidChainError):
        replay(c.ledger.chain[:1] + c.ledger.chain[2:])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_replay_deterministic_and_compositional(seed, n):
    c = random_chain(random.Random(seed), n)
    chain = c.ledger.chain
    a, b = replay(chain), replay(chain)
    assert state_digest(a) == state_digest(b) == state_digest(c.ledger.state)
    k = n // 2
    assert state_digest(replay(chain[k + 1:], start=replay(chain[:k + 1]))) == state_digest(a)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_replicas_agree(seed, n):
    # two honest nodes receiving the same blocks hold byte-identical state
    c = random_chain(random.Random(seed), n)
    other = Ledger(c.ledger.chain[:1])
    for block in c.ledger.chain[1:]:
        for tx in block.transactions:
            other.submit(tx)
        cand = seal_block(other, block.timestamp, block.proposer)
        assert cand.digest == block.digest
        assert vote_and_append(other, cand, block.voters)
    assert state_digest(other.state) == state_digest(c.ledger.state)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_append_monotone_and_tx_unique(seed, n):
    c = random_chain(random.Random(seed), n)
    ids = [tx.id for b in c.ledger.chain for tx in b.transactions]
    assert len(ids) == len(set(ids))
    assert [b.index for b in c.ledger.chain] == list(range(n + 1))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_flow_versions_gapless(seed):
    c = random_chain(random.Random(seed), 8)
    seen: dict[str, list[int]] = {}
    state = replay(c.ledger.chain[:1])
    for block in c.ledger.chain[1:]:
        state = replay([block], start=state)
        for sw, t in state.flow_tables.items():
            seen.setdefault(sw, [1])
            if t.version != seen[sw][-1]:
                seen[sw].append(t.version)
    for versions in seen.values():
        assert versions == list(range(1, len(versions) + 1))


# --- snapshots ---------------------------------------------------------------

def test_snapshot_roundtrip(tmp_path):
    c = random_chain(random.Random(6), 5)
    path = tmp_path / "chain.bsdn"
    write_snapshot(path, c.ledger.chain)
    data = path.read_bytes()
    assert data[:5] == b"BSDN\x01"
    assert read_snapshot(path) == c.ledger.chain
    assert [decode_block(r) for r in split_snapshot(data)] == c.ledger.chain


@pytest.mark.parametrize("mutate", [
    lambda d: d[:-1],
    lambda d: d[:7],
    lambda d: b"XSDN" + d[4:],
    lambda d: d[:4] + b"\x02" + d[5:],
    lambda d: d[:5],
])
def test_snapshot_format_errors(mutate):
    c = random_chain(random.Random(7), 2)
    with pytest.raises(SnapshotFormatError):
        split_snapshot(mutate(snapshot_bytes(c.ledger.chain)))


def test_decode_error_inside_frame_is_integrity_failure():
    c = random_chain(random.Random(8), 2)
    records = [encode_block(b) for b in c.ledger.chain]
    records[1] = records[1][:-1] + b"\x00\x00"
    d, _ = verify_records(records)
    assert d.reason == "break_at:1" and d.detail.startswith("decode_error")


def test_admit_payload_roundtrip_through_block(chain):
    rid, g, a = chain.request("alice", "d1", "read", "p1")
    b = chain.commit(g, a)
    assert decode_block(encode_block(b)) == b
    assert isinstance(b.transactions[1].payload, LoadAdmitPayload)


def test_flow_update_payload_roundtrip(chain):
    upd = FlowRuleUpdatePayload("s1", 1, (FlowOp.add(FlowEntry(5, 3)), FlowOp.delete(5)))
    b = chain.commit(chain.tx(TxKind.FlowRuleUpdate, "c2", upd))
    assert decode_block(encode_block(b)).transactions[0].payload == upd


def test_policy_creation_requires_owner_issuer(chain):
    p = AccessPolicy("p9", "carol", "d2", (), ("read",))
    tx = chain.tx(TxKind.PolicyCreation, "alice", PolicyCreationPayload(p))
    assert validate_transaction(tx, chain.ledger.state).reason == "not_owner"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 7), st.data())
def test_any_single_byte_change_is_detected(seed, n, data):
    records = [encode_block(b) for b in random_chain(random.Random(seed), n).ledger.chain]
    i = data.draw(st.integers(0, len(records) - 1))
    pos = data.draw(st.integers(0, len(records[i]) - 1))
    mask = data.draw(st.integers(1, 255))
    rec = bytearray(records[i])
    rec[pos] ^= mask
    records[i] = bytes(rec)
    d, _ = verify_records(records)
    assert not d and d.reason.startswith("break_at:")
