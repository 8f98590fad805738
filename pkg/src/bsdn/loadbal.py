"""Per-device load accounting and admission control.

Load only changes through committed LoadAdmit/LoadRelease transactions, so a
local server that approves requests without checking cannot push a device past
its capacity: the quorum re-checks every admission against replayed state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

from .codec import DecodeError, expect, expect_list
from .core import Decision

if TYPE_CHECKING:
    from .access import AccessRequest
    from .ledger import Block, Ledger
    from .state import WorldState


@dataclass(frozen=True)
class TaskKind:
    kind: str
    cost: int
    duration: float

    def __post_init__(self):
        if self.cost <= 0:
            raise ValueError(f"task {self.kind}: cost must be positive")
        if self.duration <= 0:
            raise ValueError(f"task {self.kind}: duration must be positive")

    def to_value(self) -> list:
        return [self.kind, self.cost, float(self.duration)]

    @classmethod
    def from_value(cls, v) -> "TaskKind":
        kind, cost, dur = expect_list(v, 3, "task")
        try:
            return cls(expect(kind, str, "kind"), expect(cost, int, "cost"), expect(dur, float, "duration"))
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc


@dataclass(frozen=True)
class ActiveTask:
    request_id: int
    cost: int
    end_time: float


@dataclass(frozen=True)
class DeviceLoad:
    device_id: str
    capacity: int
    active: tuple[ActiveTask, ...] = field(default=())

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError(f"device {self.device_id}: capacity must be positive")

    @property
    def current(self) -> int:
        return sum(t.cost for t in self.active)

    def find(self, request_id: int) -> ActiveTask | None:
        for t in self.active:
            if t.request_id == request_id:
                return t
        return None

    def admit(self, request_id: int, cost: int, end_time: float) -> "DeviceLoad":
        return replace(self, active=self.active + (ActiveTask(request_id, cost, end_time),))

    def release(self, request_id: int) -> "DeviceLoad":
        if self.find(request_id) is None:
            raise KeyError(f"unknown_admit: {request_id}")
        return replace(self, active=tuple(t for t in self.active if t.request_id != request_id))


@dataclass(frozen=True)
class LoadAdmitPayload:
    request_id: int
    user: str
    device: str
    task: str

    def to_value(self) -> list:
        return [self.request_id, self.user, self.device, self.task]

    @classmethod
    def from_value(cls, v) -> "LoadAdmitPayload":
        rid, user, dev, task = expect_list(v, 4, "load admit")
        return cls(expect(rid, int, "request_id"), expect(user, str, "user"),
                   expect(dev, str, "device"), expect(task, str, "task"))


@dataclass(frozen=True)
class LoadReleasePayload:
    request_id: int
    device: str

    def to_value(self) -> list:
        return [self.request_id, self.device]

    @classmethod
    def from_value(cls, v) -> "LoadReleasePayload":
        rid, dev = expect_list(v, 2, "load release")
        return cls(expect(rid, int, "request_id"), expect(dev, str, "device"))


def check_admission(req: "AccessRequest", state: "WorldState") -> Decision:
    load = state.loads.get(req.device)
    if load is None:
        return Decision.reject("unknown_device", req.device)
    task = state.tasks.get(req.task)
    if task is None:
        return Decision.reject("unknown_task", req.task)
    if load.current + task.cost > load.capacity:
        return Decision.reject("over_capacity", f"{load.current}+{task.cost}>{load.capacity}")
    return Decision.accept()


def check_admit(payload: LoadAdmitPayload, state: "WorldState") -> Decision:
    """Ledger-level LoadAdmit check: a live grant for the request plus capacity."""
    from .access import AccessRequest

    policy_id = state.grants.get(payload.request_id)
    if policy_id is None:
        return Decision.reject("no_grant", str(payload.request_id))
    if payload.request_id in state.admitted:
        return Decision.reject("duplicate_admit", str(payload.request_id))
    p = state.policies[policy_id]
    if not p.active or state.right_holders[policy_id] != payload.user or p.device_id != payload.device:
        return Decision.reject("grant_revoked", policy_id)
    return check_admission(AccessRequest(payload.user, payload.device, payload.task), state)


def check_release(payload: LoadReleasePayload, state: "WorldState") -> Decision:
    load = state.loads.get(payload.device)
    if load is None or load.find(payload.request_id) is None:
        return Decision.reject("unknown_admit", str(payload.request_id))
    return Decision.accept()


def apply_admit(payload: LoadAdmitPayload, state: "WorldState", now: float) -> None:
    """Record the admission in ``state`` (a replay-owned value)."""
    task = state.tasks[payload.task]
    load = state.loads[payload.device]
    state.loads[payload.device] = load.admit(payload.request_id, task.cost, now + task.duration)
    state.admitted.add(payload.request_id)


def apply_release(payload: LoadReleasePayload, state: "WorldState") -> None:
    state.loads[payload.device] = state.loads[payload.device].release(payload.request_id)


# --- audit -------------------------------------------------------------------

@dataclass
class GuardAudit:
    violations: int
    peak_load: dict[str, int]
    greedy_attempts: int
    greedy_rejections: int
    heights_checked: int


def committed_peaks(chain: "list[Block]") -> tuple[int, dict[str, int]]:
    """Replay block by block; count (height, device) pairs over capacity and track peaks."""
    from .ledger import apply_block, genesis_state

    state = genesis_state(chain[0])
    peaks = {d: load.current for d, load in state.loads.items()}
    violations = 0
    for block in chain[1:]:
        apply_block(state, block)
        for d, load in state.loads.items():
            peaks[d] = max(peaks[d], load.current)
            if load.current > load.capacity:
                violations += 1
    return violations, peaks


def greedy_server_guard(ledger: "Ledger", greedy_id: str | None) -> GuardAudit:
    """Audit a finished run: committed load never over capacity, greedy attempts counted."""
    violations, peaks = committed_peaks(ledger.chain)
    attempts = sum(1 for tx in ledger.submitted if tx.issuer == greedy_id and tx.kind.name == "LoadAdmit")
    rejected = sum(1 for tx, _reason in ledger.rejected if tx.issuer == greedy_id)
    return GuardAudit(violations, peaks, attempts, rejected, len(ledger.chain))
