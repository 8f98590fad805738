from __future__ import annotations

import itertools
import random
from typing import Optional

import pytest

from bsdn.access import (
    AccessGrantPayload,
    AccessPolicy,
    AttrConstraint,
    PolicyCreationPayload,
    RightTransferPayload,
    UserAttributes,
)
from bsdn.flowtable import FlowEntry, FlowOp, FlowRuleUpdatePayload, Forward, MatchFields
from bsdn.ledger import Ledger, Transaction, TxKind, seal_block, vote_and_append
from bsdn.loadbal import LoadAdmitPayload, LoadReleasePayload, TaskKind
from bsdn.state import GenesisPayload

CONTROLLERS = tuple(f"c{i}" for i in range(1, 7))
SWITCHES = ("s1", "s2", "s3")
USERS = (
    UserAttributes("alice", "operator", "org1", 2),
    UserAttributes("bob", "auditor", "org1", 1),
    UserAttributes("carol", "admin", "org2", 3),
)
TASKS = (TaskKind("read", 1, 2.0), TaskKind("write", 3, 5.0))


def small_genesis(policies=None, devices=(("d1", 10), ("d2", 4)), controllers=CONTROLLERS) -> GenesisPayload:
    if policies is None:
        policies = (
            AccessPolicy("p1", "alice", "d1", (AttrConstraint("role", "==", "operator"),), ("read", "write")),
            AccessPolicy("p2", "bob", "d2", (AttrConstraint("clearance", ">=", 1),), ("read",)),
        )
    return GenesisPayload(
        controllers=controllers,
        switches=SWITCHES,
        hosts=(("h1", 0x0A000001),),
        devices=tuple(devices),
        users=USERS,
        tasks=TASKS,
        policies=tuple(policies),
    )


class Chain:
    """Builds ledgers transaction by transaction for tests."""

    def __init__(self, genesis: Optional[GenesisPayload] = None, **kw):
        self.ledger = Ledger.create(genesis or small_genesis(), **kw)
        self.ids = itertools.count(1)
        self.now = 0.0
        self.request_ids = itertools.count(1)

    def tx(self, kind: TxKind, issuer: str, payload) -> Transaction:
        return Transaction(next(self.ids), kind, issuer, payload, self.now)

    def commit(self, *txs: Transaction, votes=None):
        self.now += self.ledger.block_interval
        for tx in txs:
            self.ledger.submit(tx)
        block = seal_block(self.ledger, self.now)
        assert block is not None, "nothing valid to seal"
        d = vote_and_append(self.ledger, block, votes if votes is not None else self.ledger.controllers)
        assert d, d
        return self.ledger.tip

    # payload helpers

    def flow_add(self, sw: str, entry_id: int, priority: int = 10, port: int = 1) -> Transaction:
        base = self.ledger.state.flow_tables[sw].version
        entry = FlowEntry(entry_id, priority, MatchFields(ip_dst=(0x0A000000 + entry_id, 32)), (Forward(port),))
        return self.tx(TxKind.FlowRuleUpdate, "c1", FlowRuleUpdatePayload(sw, base, (FlowOp.add(entry),)))

    def transfer(self, policy: str, a: str, b: str) -> Transaction:
        return self.tx(TxKind.RightTransfer, a, RightTransferPayload(policy, a, b))

    def create_policy(self, policy: AccessPolicy) -> Transaction:
        return self.tx(TxKind.PolicyCreation, policy.owner, PolicyCreationPayload(policy))

    def request(self, user: str, device: str, task: str, policy: str, server: str = "c1"):
        rid = next(self.request_ids)
        grant = self.tx(TxKind.AccessGrant, server, AccessGrantPayload(rid, user, device, task, policy))
        admit = self.tx(TxKind.LoadAdmit, server, LoadAdmitPayload(rid, user, device, task))
        return rid, grant, admit

    def release(self, rid: int, device: str, server: str = "c1") -> Transaction:
        return self.tx(TxKind.LoadRelease, server, LoadReleasePayload(rid, device))


def random_chain(rng: random.Random, n_blocks: int) -> Chain:
    """A valid chain of ``n_blocks`` non-genesis blocks with a mix of transaction kinds."""
    c = Chain()
    holders = {"p1": "alice", "p2": "bob"}
    users = [u.user_id for u in USERS]
    active: list[tuple[int, str]] = []
    entry_ids = itertools.count(1)
    for _ in range(n_blocks):
        txs = []
        choice = rng.randrange(4)
        if choice == 0:
            sw = rng.choice(SWITCHES)
            txs.append(c.flow_add(sw, next(entry_ids), priority=rng.randrange(65536)))
        elif choice == 1:
            pid = rng.choice(sorted(holders))
            new = rng.choice([u for u in users if u != holders[pid]])
            txs.append(c.transfer(pid, holders[pid], new))
            holders[pid] = new
        elif choice == 2 and holders["p1"] == "alice" and c.ledger.state.loads["d1"].current < 10:
            rid, g, a = c.request("alice", "d1", "read", "p1")
            txs += [g, a]
            active.append((rid, "d1"))
        elif active:
            rid, dev = active.pop(0)
            txs.append(c.release(rid, dev))
        else:
            txs.append(c.flow_add("s1", next(entry_ids)))
        c.commit(*txs)
    return c


@pytest.fixture
def chain() -> Chain:
    return Chain()
