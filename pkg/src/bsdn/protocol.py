"""Flow rule table update protocol.

A switch in requesting mode broadcasts its table version and hash. Controllers
answer from the ledger; switches compare against their own copy of the
requester's table and, when versions tie, ask ``k`` controllers to recompute
the ledger hash before confirming. The requester reconciles the responses
with :func:`resolve`, never adopting a table whose hash differs from the
ledger record for its version.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Optional, Union

from .core import sha256
from .flowtable import FlowRuleTable, table_hash

if TYPE_CHECKING:
    from .state import WorldState


class NodeMode(enum.Enum):
    requesting = "requesting"
    responding = "responding"


class AlreadyRequesting(RuntimeError):
    pass


@dataclass(frozen=True)
class UpdateRequest:
    requester: str
    frt_version: int
    frt_hash: bytes
    full_table: Optional[FlowRuleTable] = None
    nonce: int = 0

    @classmethod
    def for_table(cls, table: FlowRuleTable, nonce: int, full: bool = False) -> "UpdateRequest":
        return cls(table.switch_id, table.version, table_hash(table), table if full else None, nonce)


@dataclass(frozen=True)
class LatestFRT:
    table: FlowRuleTable
    repair: bool = False


@dataclass(frozen=True)
class Confirm:
    version: int
    hash: bytes


@dataclass(frozen=True)
class NeedTable:
    pass


@dataclass(frozen=True)
class Mismatch:
    version: int
    hash: bytes


Body = Union[LatestFRT, Confirm, NeedTable, Mismatch]


@dataclass(frozen=True)
class ResponsePacket:
    responder: str
    responder_role: str  # "controller" | "switch"
    body: Body
    nonce: int = 0


@dataclass
class HashChallenge:
    challenger: str
    target: tuple[str, int]  # (switch id, version)
    expected: bytes
    recipients: tuple[str, ...] = ()
    responses: dict[str, bytes] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return bool(self.recipients) and set(self.responses) >= set(self.recipients)


@dataclass(frozen=True)
class ChallengeRequest:
    challenge_id: int
    challenger: str
    switch_id: str
    version: int


@dataclass(frozen=True)
class ChallengeReply:
    challenge_id: int
    responder: str
    digest: bytes


@dataclass(frozen=True)
class BlockNotice:
    """Ledger replication hint: new table versions committed at ``height``."""

    height: int
    versions: tuple[tuple[str, int], ...]


# --- response rules ----------------------------------------------------------

def controller_respond(req: UpdateRequest, state: "WorldState", responder: str) -> ResponsePacket:
    latest = state.flow_tables[req.requester]
    if req.frt_version < latest.version:
        body: Body = LatestFRT(latest)
    elif state.ledger_hash(req.requester, req.frt_version) == req.frt_hash:
        body = Confirm(req.frt_version, req.frt_hash)
    else:
        # integrity check failed: repair from the ledger copy
        body = LatestFRT(latest, repair=True)
    return ResponsePacket(responder, "controller", body, req.nonce)


def switch_respond(req: UpdateRequest, own: Optional[FlowRuleTable], responder: str) -> Union[ResponsePacket, HashChallenge]:
    """``own`` is the responder's replica of the requester's table."""
    if own is None or req.frt_version > own.version:
        return ResponsePacket(responder, "switch", NeedTable(), req.nonce)
    if req.frt_version < own.version:
        return ResponsePacket(responder, "switch", LatestFRT(own), req.nonce)
    return HashChallenge(responder, (req.requester, req.frt_version), req.frt_hash)


def complete_challenge(ch: HashChallenge, req: UpdateRequest) -> ResponsePacket:
    """Confirm only when every recipient answered with the requester's hash."""
    ok = ch.complete and all(d == req.frt_hash for d in ch.responses.values())
    body: Body = Confirm(req.frt_version, req.frt_hash) if ok else Mismatch(req.frt_version, req.frt_hash)
    return ResponsePacket(ch.challenger, "switch", body, req.nonce)


def accept_offered_table(req: UpdateRequest, own: Optional[FlowRuleTable], state: "WorldState") -> Optional[FlowRuleTable]:
    """A newer requester table sent after NeedTable replaces our replica if the ledger vouches for it."""
    t = req.full_table
    if t is None or t.switch_id != req.requester:
        return None
    if own is not None and t.version <= own.version:
        return None
    if table_hash(t) != state.ledger_hash(t.switch_id, t.version):
        return None
    return t


@dataclass(frozen=True)
class Resolution:
    table: FlowRuleTable
    adopted: bool
    ok: bool
    source: str  # "controller" | "switch" | "confirm" | "none"


def _vouched(t: FlowRuleTable, switch_id: str, state: "WorldState") -> bool:
    return t.switch_id == switch_id and table_hash(t) == state.ledger_hash(switch_id, t.version)


def resolve(own: FlowRuleTable, responses: list[ResponsePacket], state: "WorldState") -> Resolution:
    """Controller tables beat switch tables beat keeping our own; never go backwards."""
    sw = own.switch_id
    own_ok = _vouched(own, sw, state)

    def pick(role: str) -> Optional[FlowRuleTable]:
        tables = [r.body.table for r in responses
                  if r.responder_role == role and isinstance(r.body, LatestFRT) and _vouched(r.body.table, sw, state)]
        return max(tables, key=lambda t: t.version) if tables else None

    for role in ("controller", "switch"):
        best = pick(role)
        if best is None:
            continue
        if best.version > own.version or (best.version == own.version and not own_ok):
            return Resolution(best, True, True, role)
        if own_ok:
            return Resolution(own, False, True, role)
    confirmed = any(isinstance(r.body, Confirm) and r.body.version == own.version and r.body.hash == table_hash(own)
                    for r in responses)
    if confirmed and own_ok:
        return Resolution(own, False, True, "confirm")
    return Resolution(own, False, False, "none")


# --- node state machines -----------------------------------------------------

@dataclass
class ProtocolParams:
    challenge_k: int = 3
    t_req: float = 0.04
    challenge_timeout: float = 0.02
    max_attempts: int = 8


class ControllerAgent:
    def __init__(self, node_id: str, net, corrupt: bool = False):
        self.id = node_id
        self.net = net
        self.corrupt = corrupt

    def on_message(self, src: str, msg: Any) -> None:
        state = self.net.ledger_state()
        if isinstance(msg, UpdateRequest):
            if msg.full_table is None:
                self.net.send(self.id, src, controller_respond(msg, state, self.id))
        elif isinstance(msg, ChallengeRequest):
            digest = state.ledger_hash(msg.switch_id, msg.version) or bytes(32)
            if self.corrupt:
                digest = sha256(digest)
            self.net.send(self.id, src, ChallengeReply(msg.challenge_id, self.id, digest))


@dataclass
class Adoption:
    time: float
    version: int
    source: str


class SwitchAgent:
    """Requesting and responding behaviour of one switch."""

    def __init__(self, node_id: str, net, replicas: dict[str, FlowRuleTable], params: ProtocolParams):
        self.id = node_id
        self.net = net
        self.replicas = replicas
        self.params = params
        self.mode = NodeMode.responding
        self.target_version = replicas[node_id].version
        self.attempts = 0
        self.failures = 0
        self.adoptions: list[Adoption] = []
        self._nonces = itertools.count(1)
        self._req: Optional[UpdateRequest] = None
        self._expected: set[str] = set()
        self._responses: list[ResponsePacket] = []
        self._timer = None
        self._retry = None
        self._challenge_ids = itertools.count(1)
        self._challenges: dict[int, tuple[HashChallenge, UpdateRequest, str, Any]] = {}

    @property
    def table(self) -> FlowRuleTable:
        return self.replicas[self.id]

    # requesting side

    def initiate_update(self) -> UpdateRequest:
        if self.mode is NodeMode.requesting:
            raise AlreadyRequesting(self.id)
        if self._retry is not None:
            self.net.cancel(self._retry)
            self._retry = None
        self.mode = NodeMode.requesting
        self.attempts += 1
        req = UpdateRequest.for_table(self.table, next(self._nonces))
        self._req = req
        self._responses = []
        self._expected = set(self.net.protocol_peers(self.id))
        for dst in sorted(self._expected):
            self.net.send(self.id, dst, req)
        self._timer = self.net.set_timer(self.params.t_req, self._on_timeout, req.nonce)
        return req

    def _abort(self) -> None:
        if self._timer is not None:
            self.net.cancel(self._timer)
        self._timer = None
        self._req = None
        self.mode = NodeMode.responding

    def on_notice(self, notice: BlockNotice) -> None:
        for sw, version in notice.versions:
            if sw == self.id and version > self.target_version:
                self.target_version = version
                if self.table.version >= version:
                    continue
                # a fresh target restarts the attempt budget
                self._abort()
                self.attempts = 0
                self.initiate_update()

    def _on_response(self, src: str, resp: ResponsePacket) -> None:
        req = self._req
        if req is None or resp.nonce != req.nonce or src not in self._expected:
            return
        self._expected.discard(src)
        self._responses.append(resp)
        if isinstance(resp.body, NeedTable):
            self.net.send(self.id, src, UpdateRequest.for_table(self.table, req.nonce, full=True))
        if not self._expected:
            self._finish()

    def _on_timeout(self, nonce: int) -> None:
        if self._req is not None and self._req.nonce == nonce:
            self._timer = None
            self._finish()

    def _finish(self) -> None:
        res = resolve(self.table, self._responses, self.net.ledger_state())
        self._abort()
        if res.adopted and res.table.version >= self.table.version:
            self.replicas[self.id] = res.table
            self.adoptions.append(Adoption(self.net.now, res.table.version, res.source))
        if not res.ok or self.table.version < self.target_version:
            self.failures += 1
            if self.attempts < self.params.max_attempts:
                backoff = self.params.t_req * (2 ** (self.attempts - 1))
                self._retry = self.net.set_timer(backoff, self._do_retry)

    def _do_retry(self) -> None:
        self._retry = None
        if self.mode is NodeMode.responding:
            self.initiate_update()

    @property
    def converged(self) -> bool:
        return self.table.version >= self.target_version

    # responding side

    def on_message(self, src: str, msg: Any) -> None:
        if isinstance(msg, ResponsePacket):
            self._on_response(src, msg)
        elif isinstance(msg, UpdateRequest):
            self._on_request(src, msg)
        elif isinstance(msg, ChallengeReply):
            self._on_challenge_reply(msg)
        elif isinstance(msg, BlockNotice):
            self.on_notice(msg)

    def _on_request(self, src: str, req: UpdateRequest) -> None:
        own = self.replicas.get(req.requester)
        if req.full_table is not None:
            newer = accept_offered_table(req, own, self.net.ledger_state())
            if newer is not None:
                self.replicas[req.requester] = newer
                self.net.send(self.id, src, ResponsePacket(self.id, "switch", Confirm(newer.version, req.frt_hash), req.nonce))
            return
        out = switch_respond(req, own, self.id)
        if isinstance(out, ResponsePacket):
            self.net.send(self.id, src, out)
            return
        cid = next(self._challenge_ids)
        out.recipients = tuple(self.net.challenge_peers(self.id, self.params.challenge_k))
        timer = self.net.set_timer(self.params.challenge_timeout, self._on_challenge_timeout, cid)
        self._challenges[cid] = (out, req, src, timer)
        for peer in out.recipients:
            self.net.send(self.id, peer, ChallengeRequest(cid, self.id, *out.target))

    def _on_challenge_reply(self, reply: ChallengeReply) -> None:
        entry = self._challenges.get(reply.challenge_id)
        if entry is None:
            return
        ch, req, src, timer = entry
        if reply.responder in ch.recipients:
            ch.responses[reply.responder] = reply.digest
        if ch.complete:
            self.net.cancel(timer)
            del self._challenges[reply.challenge_id]
            self.net.send(self.id, src, complete_challenge(ch, req))

    def _on_challenge_timeout(self, cid: int) -> None:
        entry = self._challenges.pop(cid, None)
        if entry is not None:
            ch, req, src, _ = entry
            self.net.send(self.id, src, complete_challenge(ch, req))


def message_type(msg: Any) -> str:
    if isinstance(msg, UpdateRequest):
        return "full_table" if msg.full_table is not None else "update_request"
    if isinstance(msg, ResponsePacket):
        return {LatestFRT: "latest_frt", Confirm: "confirm", NeedTable: "need_table", Mismatch: "mismatch"}[type(msg.body)]
    if isinstance(msg, ChallengeRequest):
        return "challenge"
    if isinstance(msg, ChallengeReply):
        return "challenge_reply"
    if isinstance(msg, BlockNotice):
        return "block_notice"
    return type(msg).__name__


def message_version_hash(msg: Any) -> tuple[int, bytes]:
    if isinstance(msg, UpdateRequest):
        return msg.frt_version, msg.frt_hash
    if isinstance(msg, ResponsePacket):
        b = msg.body
        if isinstance(b, LatestFRT):
            return b.table.version, table_hash(b.table)
        if isinstance(b, (Confirm, Mismatch)):
            return b.version, b.hash
        return 0, b""
    if isinstance(msg, ChallengeRequest):
        return msg.version, b""
    if isinstance(msg, ChallengeReply):
        return 0, msg.digest
    if isinstance(msg, BlockNotice):
        return msg.height, b""
    return 0, b""

