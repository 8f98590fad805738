"""World state replayed from the chain, and the genesis record that seeds it."""

from __future__ import annotations

from dataclasses import dataclass, field

from .access import AccessPolicy, UserAttributes
from .codec import DecodeError, encode, expect, expect_list
from .core import sha256
from .flowtable import FlowRuleTable, table_hash
from .loadbal import DeviceLoad, TaskKind


@dataclass(frozen=True)
class GenesisPayload:
    """Initial membership, identities, capacities, policies and version-1 tables."""

    controllers: tuple[str, ...]
    switches: tuple[str, ...]
    hosts: tuple[tuple[str, int], ...] = ()  # (host id, IPv4 address)
    devices: tuple[tuple[str, int], ...] = ()  # (device id, capacity)
    users: tuple[UserAttributes, ...] = ()
    tasks: tuple[TaskKind, ...] = ()
    policies: tuple[AccessPolicy, ...] = ()
    tables: tuple[FlowRuleTable, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "controllers", tuple(sorted(self.controllers)))
        object.__setattr__(self, "switches", tuple(sorted(self.switches)))
        if not self.controllers:
            raise ValueError("at least one controller is required")
        ids = [*self.controllers, *self.switches, *(h for h, _ in self.hosts),
               *(d for d, _ in self.devices), *(u.user_id for u in self.users)]
        if len(set(ids)) != len(ids):
            raise ValueError("identities must be unique across nodes and users")
        for t in self.tables:
            if t.switch_id not in self.switches or t.version != 1:
                raise ValueError(f"initial table for {t.switch_id} must be version 1 of a known switch")

    def to_value(self) -> list:
        return [
            list(self.controllers),
            list(self.switches),
            [[h, ip] for h, ip in self.hosts],
            [[d, c] for d, c in self.devices],
            [u.to_value() for u in self.users],
            [t.to_value() for t in self.tasks],
            [p.to_value() for p in self.policies],
            [t.to_value() for t in self.tables],
        ]

    @classmethod
    def from_value(cls, v) -> "GenesisPayload":
        ctrl, sw, hosts, devices, users, tasks, policies, tables = expect_list(v, 8, "genesis")
        strs = lambda xs, what: tuple(expect(x, str, what) for x in expect_list(xs, None, what))
        pairs = lambda xs, what: tuple(
            (expect(a, str, what), expect(b, int, what)) for a, b in (expect_list(x, 2, what) for x in expect_list(xs, None, what))
        )
        ctrl_ids, sw_ids = strs(ctrl, "controllers"), strs(sw, "switches")
        if list(ctrl_ids) != sorted(ctrl_ids) or list(sw_ids) != sorted(sw_ids):
            raise DecodeError("genesis membership not in canonical order")
        try:
            return cls(
                ctrl_ids,
                sw_ids,
                pairs(hosts, "hosts"),
                pairs(devices, "devices"),
                tuple(UserAttributes.from_value(u) for u in expect_list(users, None, "users")),
                tuple(TaskKind.from_value(t) for t in expect_list(tasks, None, "tasks")),
                tuple(AccessPolicy.from_value(p) for p in expect_list(policies, None, "policies")),
                tuple(FlowRuleTable.from_value(t) for t in expect_list(tables, None, "tables")),
            )
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc


@dataclass
class WorldState:
    """Deterministic function of a chain prefix. Mutated only while replaying."""

    nodes: dict[str, str] = field(default_factory=dict)  # id -> role
    users: dict[str, UserAttributes] = field(default_factory=dict)
    tasks: dict[str, TaskKind] = field(default_factory=dict)
    host_ips: dict[int, str] = field(default_factory=dict)
    flow_tables: dict[str, FlowRuleTable] = field(default_factory=dict)
    table_hashes: dict[str, list[bytes]] = field(default_factory=dict)  # index = version - 1
    policies: dict[str, AccessPolicy] = field(default_factory=dict)
    right_holders: dict[str, str] = field(default_factory=dict)
    loads: dict[str, DeviceLoad] = field(default_factory=dict)
    grants: dict[int, str] = field(default_factory=dict)  # request id -> policy id
    admitted: set[int] = field(default_factory=set)
    tx_ids: set[int] = field(default_factory=set)
    height: int = -1

    @classmethod
    def from_genesis(cls, g: GenesisPayload) -> "WorldState":
        s = cls()
        for c in g.controllers:
            s.nodes[c] = "controller"
        for sw in g.switches:
            s.nodes[sw] = "switch"
            s.flow_tables[sw] = FlowRuleTable(sw, 1)
        for h, ip in g.hosts:
            s.nodes[h] = "host"
            s.host_ips[ip] = h
        for d, cap in g.devices:
            s.nodes[d] = "device"
            s.loads[d] = DeviceLoad(d, cap)
        for t in g.tables:
            s.flow_tables[t.switch_id] = t
        for sw, t in s.flow_tables.items():
            s.table_hashes[sw] = [table_hash(t)]
        s.users = {u.user_id: u for u in g.users}
        s.tasks = {t.kind: t for t in g.tasks}
        for p in g.policies:
            s.policies[p.policy_id] = p
            s.right_holders[p.policy_id] = p.owner
        s.height = 0
        return s

    @property
    def controllers(self) -> tuple[str, ...]:
        return tuple(sorted(n for n, r in self.nodes.items() if r == "controller"))

    def is_registered(self, identity: str) -> bool:
        return identity in self.nodes or identity in self.users

    def ledger_hash(self, switch_id: str, version: int) -> bytes | None:
        hashes = self.table_hashes.get(switch_id)
        if hashes is None or not 1 <= version <= len(hashes):
            return None
        return hashes[version - 1]

    def copy(self) -> "WorldState":
        return WorldState(
            nodes=dict(self.nodes),
            users=dict(self.users),
            tasks=dict(self.tasks),
            host_ips=dict(self.host_ips),
            flow_tables=dict(self.flow_tables),
            table_hashes={k: list(v) for k, v in self.table_hashes.items()},
            policies=dict(self.policies),
            right_holders=dict(self.right_holders),
            loads=dict(self.loads),
            grants=dict(self.grants),
            admitted=set(self.admitted),
            tx_ids=set(self.tx_ids),
            height=self.height,
        )

    def to_value(self) -> list:
        return [
            self.height,
            [[k, self.nodes[k]] for k in sorted(self.nodes)],
            [self.users[k].to_value() for k in sorted(self.users)],
            [self.tasks[k].to_value() for k in sorted(self.tasks)],
            [[ip, self.host_ips[ip]] for ip in sorted(self.host_ips)],
            [self.flow_tables[k].to_value() for k in sorted(self.flow_tables)],
            [[k, list(self.table_hashes[k])] for k in sorted(self.table_hashes)],
            [self.policies[k].to_value() for k in sorted(self.policies)],
            [[k, self.right_holders[k]] for k in sorted(self.right_holders)],
            [
                [d, load.capacity, [[t.request_id, t.cost, t.end_time] for t in sorted(load.active, key=lambda t: t.request_id)]]
                for d, load in sorted(self.loads.items())
            ],
            [[r, self.grants[r]] for r in sorted(self.grants)],
            sorted(self.admitted),
            sorted(self.tx_ids),
        ]


def encode_state(state: WorldState) -> bytes:
    return encode(state.to_value())


def state_digest(state: WorldState) -> bytes:
    return sha256(encode_state(state))
