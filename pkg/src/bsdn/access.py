"""Attribute-based access control over ledger state.

Policies are allow-lists: a request is allowed only when some active policy
on the target device is currently held by the requester, the requester's
attributes satisfy every constraint, and the task is listed. Rights move
between users by transfer transactions and are exclusive.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

from .codec import DecodeError, expect, expect_list
from .core import Decision

if TYPE_CHECKING:
    from .state import WorldState

ATTRIBUTES = ("role", "org", "clearance")


@dataclass(frozen=True)
class UserAttributes:
    user_id: str
    role: str
    org: str
    clearance: int = 0

    def __post_init__(self):
        if self.clearance < 0:
            raise ValueError("clearance must be >= 0")

    def to_value(self) -> list:
        return [self.user_id, self.role, self.org, self.clearance]

    @classmethod
    def from_value(cls, v) -> "UserAttributes":
        uid, role, org, clr = expect_list(v, 4, "user")
        try:
            return cls(expect(uid, str, "user_id"), expect(role, str, "role"),
                       expect(org, str, "org"), expect(clr, int, "clearance"))
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc


@dataclass(frozen=True)
class AttrConstraint:
    """``attr == value`` or, for clearance only, ``clearance >= value``."""

    attr: str
    op: str
    value: str | int

    def __post_init__(self):
        if self.attr not in ATTRIBUTES:
            raise ValueError(f"unknown attribute {self.attr!r}")
        if self.op not in ("==", ">="):
            raise ValueError(f"unknown operator {self.op!r}")
        if self.op == ">=" and self.attr != "clearance":
            raise ValueError("threshold constraints apply to clearance only")
        if (self.attr == "clearance") != isinstance(self.value, int):
            raise ValueError(f"bad value type for {self.attr}")

    def holds(self, user: UserAttributes) -> bool:
        actual = getattr(user, self.attr)
        return actual >= self.value if self.op == ">=" else actual == self.value

    def to_value(self) -> list:
        return [self.attr, self.op, self.value]

    @classmethod
    def from_value(cls, v) -> "AttrConstraint":
        attr, op, value = expect_list(v, 3, "constraint")
        try:
            return cls(expect(attr, str, "attr"), expect(op, str, "op"), expect(value, (str, int), "value"))
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc


def _constraints_value(cs: Iterable[AttrConstraint]) -> list:
    return [c.to_value() for c in cs]


def _constraints_from(v) -> tuple[AttrConstraint, ...]:
    return tuple(AttrConstraint.from_value(c) for c in expect_list(v, None, "constraints"))


def _tasks_from(v) -> tuple[str, ...]:
    tasks = tuple(expect(t, str, "task") for t in expect_list(v, None, "tasks"))
    if list(tasks) != sorted(set(tasks)):
        raise DecodeError("tasks not in canonical order")
    return tasks


@dataclass(frozen=True)
class AccessPolicy:
    policy_id: str
    owner: str
    device_id: str
    required_attrs: tuple[AttrConstraint, ...] = ()
    allowed_tasks: tuple[str, ...] = ()
    active: bool = True

    def __post_init__(self):
        object.__setattr__(self, "allowed_tasks", tuple(sorted(set(self.allowed_tasks))))
        object.__setattr__(self, "required_attrs", tuple(self.required_attrs))
        if self.active and not self.allowed_tasks:
            raise ValueError(f"active policy {self.policy_id} allows no tasks")

    def attrs_hold(self, user: UserAttributes) -> bool:
        return all(c.holds(user) for c in self.required_attrs)

    def to_value(self) -> list:
        return [self.policy_id, self.owner, self.device_id, _constraints_value(self.required_attrs),
                list(self.allowed_tasks), self.active]

    @classmethod
    def from_value(cls, v) -> "AccessPolicy":
        pid, owner, dev, attrs, tasks, active = expect_list(v, 6, "policy")
        try:
            return cls(expect(pid, str, "policy_id"), expect(owner, str, "owner"), expect(dev, str, "device"),
                       _constraints_from(attrs), _tasks_from(tasks), expect(active, bool, "active"))
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc


@dataclass(frozen=True)
class AccessRequest:
    """A user asks a device to run one task."""

    user: str
    device: str
    task: str
    sim_time: float = 0.0
    request_id: int = 0


@dataclass(frozen=True)
class PolicyCreationPayload:
    policy: AccessPolicy

    def to_value(self) -> list:
        return [self.policy.to_value()]

    @classmethod
    def from_value(cls, v) -> "PolicyCreationPayload":
        (p,) = expect_list(v, 1, "policy creation")
        return cls(AccessPolicy.from_value(p))


@dataclass(frozen=True)
class PolicyUpdatePayload:
    """Replaces the conditions of an existing policy (owner only)."""

    policy_id: str
    required_attrs: tuple[AttrConstraint, ...]
    allowed_tasks: tuple[str, ...]
    active: bool

    def __post_init__(self):
        object.__setattr__(self, "allowed_tasks", tuple(sorted(set(self.allowed_tasks))))
        object.__setattr__(self, "required_attrs", tuple(self.required_attrs))

    def to_value(self) -> list:
        return [self.policy_id, _constraints_value(self.required_attrs), list(self.allowed_tasks), self.active]

    @classmethod
    def from_value(cls, v) -> "PolicyUpdatePayload":
        pid, attrs, tasks, active = expect_list(v, 4, "policy update")
        return cls(expect(pid, str, "policy_id"), _constraints_from(attrs), _tasks_from(tasks),
                   expect(active, bool, "active"))


@dataclass(frozen=True)
class RightTransferPayload:
    policy_id: str
    from_user: str
    to_user: str

    def to_value(self) -> list:
        return [self.policy_id, self.from_user, self.to_user]

    @classmethod
    def from_value(cls, v) -> "RightTransferPayload":
        pid, a, b = expect_list(v, 3, "right transfer")
        return cls(expect(pid, str, "policy_id"), expect(a, str, "from"), expect(b, str, "to"))


@dataclass(frozen=True)
class AccessGrantPayload:
    request_id: int
    user: str
    device: str
    task: str
    policy_id: str

    def request(self, sim_time: float = 0.0) -> AccessRequest:
        return AccessRequest(self.user, self.device, self.task, sim_time, self.request_id)

    def to_value(self) -> list:
        return [self.request_id, self.user, self.device, self.task, self.policy_id]

    @classmethod
    def from_value(cls, v) -> "AccessGrantPayload":
        rid, user, dev, task, pid = expect_list(v, 5, "access grant")
        return cls(expect(rid, int, "request_id"), expect(user, str, "user"), expect(dev, str, "device"),
                   expect(task, str, "task"), expect(pid, str, "policy_id"))


# --- checks ------------------------------------------------------------------

def check_policy_op(payload, state: "WorldState", issuer: str) -> Decision:
    if isinstance(payload, PolicyCreationPayload):
        p = payload.policy
        if p.policy_id in state.policies:
            return Decision.reject("duplicate_policy", p.policy_id)
        if issuer != p.owner:
            return Decision.reject("not_owner", f"{issuer} != {p.owner}")
        if p.owner not in state.users:
            return Decision.reject("unknown_user", p.owner)
        if p.device_id not in state.loads:
            return Decision.reject("unknown_device", p.device_id)
        unknown = [t for t in p.allowed_tasks if t not in state.tasks]
        if unknown:
            return Decision.reject("unknown_task", unknown[0])
        return Decision.accept()
    if isinstance(payload, PolicyUpdatePayload):
        p = state.policies.get(payload.policy_id)
        if p is None:
            return Decision.reject("unknown_policy", payload.policy_id)
        if issuer != p.owner:
            return Decision.reject("not_owner", f"{issuer} != {p.owner}")
        if payload.active and not payload.allowed_tasks:
            return Decision.reject("empty_tasks", payload.policy_id)
        unknown = [t for t in payload.allowed_tasks if t not in state.tasks]
        if unknown:
            return Decision.reject("unknown_task", unknown[0])
        return Decision.accept()
    return Decision.reject("kind_mismatch", type(payload).__name__)


def check_transfer(payload: RightTransferPayload, state: "WorldState", issuer: str) -> Decision:
    p = state.policies.get(payload.policy_id)
    if p is None:
        return Decision.reject("unknown_policy", payload.policy_id)
    if not p.active:
        return Decision.reject("inactive_policy", payload.policy_id)
    if payload.from_user == payload.to_user:
        return Decision.reject("self_transfer", payload.from_user)
    holder = state.right_holders[payload.policy_id]
    if payload.from_user != holder or issuer != payload.from_user:
        return Decision.reject("not_right_holder", f"holder is {holder}")
    if payload.to_user not in state.users:
        return Decision.reject("unknown_user", payload.to_user)
    return Decision.accept()


# deny reasons ordered by how far evaluation got
_DENY_STAGES = ("no_policy", "not_right_holder", "attributes_mismatch", "task_not_allowed")


def evaluate_request(req: AccessRequest, state: "WorldState") -> Decision:
    """Allow with the lowest satisfying policy id, or deny with the furthest failing stage."""
    user = state.users.get(req.user)
    if user is None:
        return Decision.reject("unknown_user", req.user)
    if req.device not in state.loads:
        return Decision.reject("unknown_device", req.device)
    if req.task not in state.tasks:
        return Decision.reject("unknown_task", req.task)
    stage = 0
    for pid in sorted(state.policies):
        p = state.policies[pid]
        if not p.active or p.device_id != req.device:
            continue
        if state.right_holders[pid] != req.user:
            stage = max(stage, 1)
            continue
        if not p.attrs_hold(user):
            stage = max(stage, 2)
            continue
        stage = 3
        if req.task in p.allowed_tasks:
            return Decision.accept(pid)
    return Decision.reject(_DENY_STAGES[stage])


def resolve_right_holder(policy_id: str, state: "WorldState") -> str:
    if policy_id not in state.policies:
        raise KeyError(f"unknown_policy: {policy_id}")
    return state.right_holders[policy_id]


def check_grant(payload: AccessGrantPayload, state: "WorldState") -> Decision:
    if payload.request_id in state.grants:
        return Decision.reject("duplicate_grant", str(payload.request_id))
    d = evaluate_request(payload.request(), state)
    if not d:
        return d
    if d.detail != payload.policy_id:
        return Decision.reject("policy_mismatch", f"{payload.policy_id} != {d.detail}")
    return d


# --- audit log ---------------------------------------------------------------

AUDIT_COLUMNS = ("sim_time", "user", "device", "task", "decision", "reason_or_policy")


@dataclass(frozen=True)
class AuditRow:
    sim_time: float
    user: str
    device: str
    task: str
    decision: str
    reason_or_policy: str

    @classmethod
    def of(cls, req: AccessRequest, d: Decision) -> "AuditRow":
        return cls(req.sim_time, req.user, req.device, req.task,
                   "allow" if d.ok else "deny", d.detail if d.ok else d.reason)


def audit_csv(rows: Iterable[AuditRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AUDIT_COLUMNS)
    for r in rows:
        w.writerow([repr(r.sim_time), r.user, r.device, r.task, r.decision, r.reason_or_policy])
    return buf.getvalue()


def write_audit_csv(path, rows: Iterable[AuditRow]) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as f:
        f.write(audit_csv(rows))
    os.replace(tmp, path)
