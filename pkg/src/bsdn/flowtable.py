"""OpenFlow-style versioned flow rule tables.

A table is an immutable value: :func:`apply_update` returns a new table with
the version bumped. Counters are node-local runtime state attached to a table
value but excluded from equality and hashing.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Optional, Union

from .codec import DecodeError, encode, expect, expect_list
from .core import Decision, sha256

if TYPE_CHECKING:
    from .state import WorldState

MAX_PRIORITY = 65535
MIN_PACKET_BYTES = 64

FIELD_BITS = {
    "in_port": 16,
    "eth_src": 48,
    "eth_dst": 48,
    "ip_proto": 8,
    "l4_src": 16,
    "l4_dst": 16,
}
FIELD_ORDER = ("in_port", "eth_src", "eth_dst", "ip_src", "ip_dst", "ip_proto", "l4_src", "l4_dst")


def _prefix_mask(prefix: int) -> int:
    return (0xFFFFFFFF << (32 - prefix)) & 0xFFFFFFFF if prefix else 0


@dataclass(frozen=True)
class MatchFields:
    """Header match; ``None`` is a wildcard. IP fields are ``(address, prefix_len)``."""

    in_port: Optional[int] = None
    eth_src: Optional[int] = None
    eth_dst: Optional[int] = None
    ip_src: Optional[tuple[int, int]] = None
    ip_dst: Optional[tuple[int, int]] = None
    ip_proto: Optional[int] = None
    l4_src: Optional[int] = None
    l4_dst: Optional[int] = None

    def __post_init__(self):
        for name, bits in FIELD_BITS.items():
            v = getattr(self, name)
            if v is not None and not (0 <= v < (1 << bits)):
                raise ValueError(f"{name}={v} out of range")
        for name in ("ip_src", "ip_dst"):
            v = getattr(self, name)
            if v is None:
                continue
            addr, prefix = v
            if not 0 <= prefix <= 32:
                raise ValueError(f"{name} prefix length {prefix} not in 0..32")
            if not 0 <= addr <= 0xFFFFFFFF:
                raise ValueError(f"{name} address out of range")
            # canonical form keeps only the network bits
            object.__setattr__(self, name, (addr & _prefix_mask(prefix), prefix))

    def matches(self, pkt: "Packet") -> bool:
        for name in FIELD_BITS:
            want = getattr(self, name)
            if want is not None and getattr(pkt, name) != want:
                return False
        for name in ("ip_src", "ip_dst"):
            want = getattr(self, name)
            if want is not None:
                addr, prefix = want
                if getattr(pkt, name) & _prefix_mask(prefix) != addr:
                    return False
        return True

    def to_value(self) -> list:
        return [list(v) if isinstance(v, tuple) else v for v in (getattr(self, f) for f in FIELD_ORDER)]

    @classmethod
    def from_value(cls, v) -> "MatchFields":
        v = expect_list(v, len(FIELD_ORDER), "match")
        kw = {}
        for name, item in zip(FIELD_ORDER, v):
            if item is None:
                kw[name] = None
            elif name in ("ip_src", "ip_dst"):
                addr, prefix = expect_list(item, 2, name)
                kw[name] = (expect(addr, int, name), expect(prefix, int, name))
            else:
                kw[name] = expect(item, int, name)
        try:
            m = cls(**kw)
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc
        if m.to_value() != v:
            raise DecodeError("match: non-canonical prefix")
        return m


@dataclass(frozen=True)
class Action:
    kind: str  # "forward" | "drop" | "controller"
    port: int = 0

    def __post_init__(self):
        if self.kind not in ("forward", "drop", "controller"):
            raise ValueError(f"unknown action {self.kind!r}")
        if self.kind != "forward" and self.port:
            raise ValueError("only forward actions carry a port")

    def to_value(self) -> list:
        return [self.kind, self.port]

    @classmethod
    def from_value(cls, v) -> "Action":
        kind, port = expect_list(v, 2, "action")
        try:
            return cls(expect(kind, str, "action"), expect(port, int, "action port"))
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc


def Forward(port: int) -> Action:
    return Action("forward", port)


DROP = Action("drop")
TO_CONTROLLER = Action("controller")


@dataclass(frozen=True)
class FlowEntry:
    entry_id: int
    priority: int
    match: MatchFields = MatchFields()
    actions: tuple[Action, ...] = ()

    def __post_init__(self):
        if not 0 <= self.priority <= MAX_PRIORITY:
            raise ValueError(f"priority {self.priority} not in 0..{MAX_PRIORITY}")
        actions = tuple(self.actions)
        object.__setattr__(self, "actions", actions or (DROP,))

    def sort_key(self) -> tuple[int, int]:
        return (-self.priority, self.entry_id)

    def to_value(self) -> list:
        return [self.entry_id, self.priority, self.match.to_value(), [a.to_value() for a in self.actions]]

    @classmethod
    def from_value(cls, v) -> "FlowEntry":
        eid, prio, match, actions = expect_list(v, 4, "entry")
        actions = [Action.from_value(a) for a in expect_list(actions, None, "actions")]
        if not actions:
            raise DecodeError("entry: empty action list is not canonical")
        try:
            return cls(expect(eid, int, "entry_id"), expect(prio, int, "priority"),
                       MatchFields.from_value(match), tuple(actions))
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc


@dataclass
class Counters:
    flow_packets: dict[int, int] = field(default_factory=dict)
    flow_bytes: dict[int, int] = field(default_factory=dict)
    port_packets: dict[int, int] = field(default_factory=dict)
    port_bytes: dict[int, int] = field(default_factory=dict)
    table_lookups: int = 0
    table_matches: int = 0
    queue_enqueued: int = 0


@dataclass(frozen=True)
class FlowRuleTable:
    switch_id: str
    version: int = 1
    entries: tuple[FlowEntry, ...] = ()
    counters: Counters = field(default_factory=Counters, compare=False, repr=False)

    def __post_init__(self):
        if self.version < 1:
            raise ValueError("table version must be >= 1")
        entries = tuple(sorted(self.entries, key=FlowEntry.sort_key))
        ids = [e.entry_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate entry ids in table {self.switch_id}")
        object.__setattr__(self, "entries", entries)

    def entry(self, entry_id: int) -> Optional[FlowEntry]:
        for e in self.entries:
            if e.entry_id == entry_id:
                return e
        return None

    def to_value(self) -> list:
        return [self.switch_id, self.version, [e.to_value() for e in self.entries]]

    @classmethod
    def from_value(cls, v) -> "FlowRuleTable":
        sw, version, entries = expect_list(v, 3, "table")
        parsed = [FlowEntry.from_value(e) for e in expect_list(entries, None, "entries")]
        if [e.sort_key() for e in parsed] != sorted(e.sort_key() for e in parsed):
            raise DecodeError("table entries not in canonical order")
        try:
            return cls(expect(sw, str, "switch_id"), expect(version, int, "version"), tuple(parsed))
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc


@dataclass(frozen=True)
class Packet:
    in_port: int = 0
    eth_src: int = 0
    eth_dst: int = 0
    ip_src: int = 0
    ip_dst: int = 0
    ip_proto: int = 17
    l4_src: int = 0
    l4_dst: int = 0
    size_bytes: int = MIN_PACKET_BYTES
    cls: str = "legit"

    def __post_init__(self):
        if self.size_bytes < MIN_PACKET_BYTES:
            raise ValueError(f"packet size {self.size_bytes} below {MIN_PACKET_BYTES} bytes")
        if self.cls not in ("legit", "attack"):
            raise ValueError(f"unknown packet class {self.cls!r}")


@dataclass(frozen=True)
class Matched:
    entry_id: int
    actions: tuple[Action, ...]


class _TableMiss:
    """No entry matched; the packet goes to the controller."""

    def __repr__(self):
        return "TableMiss"


TableMiss = _TableMiss()
MatchResult = Union[Matched, _TableMiss]


def match_packet(table: FlowRuleTable, pkt: Packet) -> MatchResult:
    c = table.counters
    c.table_lookups += 1
    c.port_packets[pkt.in_port] = c.port_packets.get(pkt.in_port, 0) + 1
    c.port_bytes[pkt.in_port] = c.port_bytes.get(pkt.in_port, 0) + pkt.size_bytes
    # entries are stored sorted by (priority desc, entry_id asc)
    for e in table.entries:
        if e.match.matches(pkt):
            c.table_matches += 1
            c.flow_packets[e.entry_id] = c.flow_packets.get(e.entry_id, 0) + 1
            c.flow_bytes[e.entry_id] = c.flow_bytes.get(e.entry_id, 0) + pkt.size_bytes
            if any(a.kind == "forward" for a in e.actions):
                c.queue_enqueued += 1
            return Matched(e.entry_id, e.actions)
    return TableMiss


def encode_table(table: FlowRuleTable) -> bytes:
    return encode(table.to_value())


def table_hash(table: FlowRuleTable) -> bytes:
    return sha256(encode_table(table))


# --- updates ---------------------------------------------------------------

@dataclass(frozen=True)
class FlowOp:
    op: str  # "add" | "delete" | "modify"
    entry_id: int
    entry: Optional[FlowEntry] = None

    def __post_init__(self):
        if self.op not in ("add", "delete", "modify"):
            raise ValueError(f"unknown flow op {self.op!r}")
        if self.op == "delete" and self.entry is not None:
            raise ValueError("delete carries no entry")
        if self.op != "delete":
            if self.entry is None or self.entry.entry_id != self.entry_id:
                raise ValueError(f"{self.op} needs an entry with id {self.entry_id}")

    @classmethod
    def add(cls, entry: FlowEntry) -> "FlowOp":
        return cls("add", entry.entry_id, entry)

    @classmethod
    def modify(cls, entry: FlowEntry) -> "FlowOp":
        return cls("modify", entry.entry_id, entry)

    @classmethod
    def delete(cls, entry_id: int) -> "FlowOp":
        return cls("delete", entry_id)

    def to_value(self) -> list:
        return [self.op, self.entry_id, self.entry.to_value() if self.entry else None]

    @classmethod
    def from_value(cls, v) -> "FlowOp":
        op, eid, entry = expect_list(v, 3, "flow op")
        try:
            return cls(expect(op, str, "op"), expect(eid, int, "op entry_id"),
                       None if entry is None else FlowEntry.from_value(entry))
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc


@dataclass(frozen=True)
class FlowRuleUpdatePayload:
    switch_id: str
    base_version: int
    ops: tuple[FlowOp, ...]

    def to_value(self) -> list:
        return [self.switch_id, self.base_version, [op.to_value() for op in self.ops]]

    @classmethod
    def from_value(cls, v) -> "FlowRuleUpdatePayload":
        sw, base, ops = expect_list(v, 3, "flow update")
        return cls(expect(sw, str, "switch_id"), expect(base, int, "base_version"),
                   tuple(FlowOp.from_value(o) for o in expect_list(ops, None, "ops")))


def _ops_problem(ids: set[int], ops: Iterable[FlowOp]) -> Optional[str]:
    ids = set(ids)
    for op in ops:
        if op.op == "add":
            if op.entry_id in ids:
                return f"duplicate_entry:{op.entry_id}"
            ids.add(op.entry_id)
        elif op.entry_id not in ids:
            return f"unknown_entry:{op.entry_id}"
        elif op.op == "delete":
            ids.discard(op.entry_id)
    return None


def check_update(update: FlowRuleUpdatePayload, state: "WorldState") -> Decision:
    table = state.flow_tables.get(update.switch_id)
    if table is None:
        return Decision.reject("unknown_switch", update.switch_id)
    if update.base_version != table.version:
        return Decision.reject("stale_base", f"base {update.base_version} != current {table.version}")
    if not update.ops:
        return Decision.reject("empty_update")
    problem = _ops_problem({e.entry_id for e in table.entries}, update.ops)
    if problem:
        reason, _, eid = problem.partition(":")
        return Decision.reject(reason, eid)
    return Decision.accept()


def apply_update(table: FlowRuleTable, update: FlowRuleUpdatePayload) -> FlowRuleTable:
    if update.switch_id != table.switch_id or update.base_version != table.version:
        raise ValueError("precondition: update does not apply to this table version")
    problem = _ops_problem({e.entry_id for e in table.entries}, update.ops)
    if problem:
        raise ValueError(f"precondition: {problem}")
    entries = {e.entry_id: e for e in table.entries}
    for op in update.ops:
        if op.op == "delete":
            del entries[op.entry_id]
        else:
            entries[op.entry_id] = op.entry
    return replace(table, version=table.version + 1, entries=tuple(entries.values()))


# --- text format -------------------------------------------------------------
# id=<n> priority=<n> match=<k=v,...> actions=<a;...>
# id= is optional (defaults to the line number); wildcards are omitted.

def _fmt_mac(v: int) -> str:
    return ":".join(f"{(v >> s) & 0xFF:02x}" for s in range(40, -8, -8))


def _parse_mac(s: str) -> int:
    parts = s.split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC {s!r}")
    return int("".join(f"{int(p, 16):02x}" for p in parts), 16)


def format_entry(e: FlowEntry) -> str:
    fields = []
    for name in FIELD_ORDER:
        v = getattr(e.match, name)
        if v is None:
            continue
        if name in ("ip_src", "ip_dst"):
            fields.append(f"{name}={ipaddress.IPv4Address(v[0])}/{v[1]}")
        elif name in ("eth_src", "eth_dst"):
            fields.append(f"{name}={_fmt_mac(v)}")
        else:
            fields.append(f"{name}={v}")
    acts = []
    for a in e.actions:
        acts.append(f"output:{a.port}" if a.kind == "forward" else a.kind)
    return f"id={e.entry_id} priority={e.priority} match={','.join(fields)} actions={';'.join(acts)}"


def parse_entry(line: str, default_id: int = 1) -> FlowEntry:
    tokens = dict(tok.split("=", 1) for tok in line.split())
    unknown = set(tokens) - {"id", "priority", "match", "actions"}
    if unknown:
        raise ValueError(f"unknown token(s) {sorted(unknown)} in {line!r}")
    kw = {}
    match = tokens.get("match", "")
    for item in filter(None, match.split(",")):
        if item == "*":
            continue
        name, _, val = item.partition("=")
        if name in ("ip_src", "ip_dst"):
            net = ipaddress.IPv4Network(val if "/" in val else val + "/32", strict=False)
            kw[name] = (int(net.network_address), net.prefixlen)
        elif name in ("eth_src", "eth_dst"):
            kw[name] = _parse_mac(val)
        elif name in FIELD_BITS:
            kw[name] = int(val, 0)
        else:
            raise ValueError(f"unknown match field {name!r}")
    actions = []
    for a in filter(None, tokens.get("actions", "").split(";")):
        if a.startswith("output:"):
            actions.append(Forward(int(a.split(":", 1)[1])))
        elif a == "drop":
            actions.append(DROP)
        elif a == "controller":
            actions.append(TO_CONTROLLER)
        else:
            raise ValueError(f"unknown action {a!r}")
    return FlowEntry(
        entry_id=int(tokens.get("id", default_id)),
        priority=int(tokens.get("priority", 0)),
        match=MatchFields(**kw),
        actions=tuple(actions),
    )


def format_table(table: FlowRuleTable) -> str:
    return "".join(format_entry(e) + "\n" for e in table.entries)


def parse_table(switch_id: str, text: str, version: int = 1) -> FlowRuleTable:
    entries = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if line:
            entries.append(parse_entry(line, default_id=n))
    return FlowRuleTable(switch_id, version, tuple(entries))
