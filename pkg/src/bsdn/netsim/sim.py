"""One simulated run: ledger, protocol agents, workloads and attack traffic on a shared clock."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import os
import tempfile
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Optional

from ..access import AccessGrantPayload, AccessRequest, AuditRow, RightTransferPayload, evaluate_request
from ..core import Decision
from ..flowtable import FlowOp, FlowRuleTable, FlowRuleUpdatePayload, Packet, TableMiss, match_packet, parse_entry
from ..ledger import (
    Block,
    Ledger,
    Transaction,
    TxKind,
    validate_candidate,
    vote_and_append,
    seal_block,
)
from ..loadbal import LoadAdmitPayload, LoadReleasePayload, check_admission, greedy_server_guard
from ..protocol import (
    BlockNotice,
    ControllerAgent,
    ProtocolParams,
    SwitchAgent,
    message_type,
    message_version_hash,
)
from ..state import state_digest
from .engine import Engine, derive_rng
from .models import (
    ModelKind,
    bandwidth_model,
    confirmation_latency,
)

if TYPE_CHECKING:
    from ..scenario import ScenarioConfig

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("t", "goodput_bps", "update_latency_s", "ctrl_queue", "accepted", "rejected")
TRACE_COLUMNS = ("sim_time", "src", "dst", "msg_type", "version", "hash_prefix8")


def fmt_value(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(round(x, 9))
    return str(x)


def atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Sample:
    t: float
    goodput_bps: float
    update_latency_s: Optional[float]
    ctrl_queue: float
    accepted: int
    rejected: int


@dataclass
class MetricsReport:
    scenario: str
    model: ModelKind
    seed: int
    samples: list[Sample]
    summary: dict[str, Any]
    latencies: list[float] = field(default_factory=list, repr=False)
    chain: list[Block] = field(default_factory=list, repr=False)
    trace: list[tuple] = field(default_factory=list, repr=False)
    audit: list[AuditRow] = field(default_factory=list, repr=False)

    @property
    def filename(self) -> str:
        return f"{self.scenario}_{self.model.value}_{self.seed}.csv"

    def column(self, name: str) -> list:
        return [getattr(s, name) for s in self.samples]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for s in self.samples:
            w.writerow([fmt_value(s.t), fmt_value(s.goodput_bps), fmt_value(s.update_latency_s), fmt_value(s.ctrl_queue),
                        s.accepted, s.rejected])
        return buf.getvalue()

    def write_csv(self, out_dir) -> str:
        path = os.path.join(os.fspath(out_dir), self.filename)
        atomic_write(path, self.to_csv())
        return path

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in self.trace:
            w.writerow([fmt_value(row[0]), *row[1:]])
        return buf.getvalue()

    def summary_text(self) -> str:
        return "\n".join(f"{k}: {fmt_value(v)}" for k, v in self.summary.items())


@dataclass(frozen=True)
class FlowMod:
    """Direct controller-to-switch table push (plain OpenFlow, no replication protocol)."""

    table: FlowRuleTable


class _Net:
    """Message transport handed to the protocol agents."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim

    @property
    def now(self) -> float:
        return self.sim.engine.now

    def send(self, src: str, dst: str, msg: Any) -> None:
        self.sim.send(src, dst, msg)

    def set_timer(self, delay: float, fn, *args):
        return self.sim.engine.after(delay, "timer", fn, *args)

    def cancel(self, handle) -> None:
        self.sim.engine.cancel(handle)

    def ledger_state(self):
        return self.sim.ledger.state

    def protocol_peers(self, node: str) -> list[str]:
        return [n for n in self.sim.members if n != node]

    def challenge_peers(self, node: str, k: int) -> list[str]:
        return self.sim.nearest_controllers[node][:k]


class Simulation:
    def __init__(self, cfg: "ScenarioConfig", model: ModelKind | str, seed: int, trace: bool = False):
        from ..scenario import validate

        self.cfg = cfg
        self.model = ModelKind(model)
        self.seed = int(seed)
        self.keep_trace = trace
        self.topo = validate(cfg)
        self.cal = cfg.calibration
        self.engine = Engine()
        interval = cfg.ledger.block_interval if self.model is ModelKind.permissioned_bc_sdn else 0.0
        self.ledger = Ledger.create(cfg.genesis(self.topo), 0.0, block_interval=interval,
                                    block_max=cfg.ledger.block_max)
        self.controllers = list(self.ledger.controllers)
        self.switches = self.topo.of_role("switch")
        self.members = sorted(self.controllers + self.switches)
        self.nearest_controllers = {
            n: sorted(self.controllers, key=lambda c: (self.topo.latency(n, c), c)) for n in self.topo.nodes
        }
        self.max_latency = self.topo.max_latency(("controller", "switch"))
        self.quorum_round = 2 * self.topo.max_latency(("controller",))

        self.rng_loss = derive_rng(seed, "loss")
        self.rng_req = derive_rng(seed, "requests")
        self.rng_pin = derive_rng(seed, "packet_in")
        self.rng_pow = derive_rng(seed, "pow")
        self._tx_ids = itertools.count(1)
        self._req_ids = itertools.count(1)

        self.net = _Net(self)
        params = ProtocolParams(
            challenge_k=cfg.protocol.challenge_k,
            t_req=cfg.protocol.t_req_factor * self.max_latency,
            challenge_timeout=2 * self.max_latency,
            max_attempts=cfg.protocol.max_attempts,
        )
        self.params = params
        corrupt = set(cfg.protocol.corrupt_controllers)
        self.agents: dict[str, Any] = {c: ControllerAgent(c, self.net, c in corrupt) for c in self.controllers}
        tables = self.ledger.state.flow_tables
        for s in self.switches:
            self.agents[s] = SwitchAgent(s, self.net, {sw: tables[sw] for sw in self.switches}, params)

        self.device_server = {d.id: d.server for d in cfg.devices}
        self.greedy = cfg.run.greedy_server
        self.request_mix = cfg.workload.requests
        self.mix_cum = list(itertools.accumulate(m.weight for m in self.request_mix))

        # metrics state
        self.trace_rows: list[tuple] = []
        self.audit: list[AuditRow] = []
        self.latencies: list[tuple[float, float]] = []
        self.samples: list[Sample] = []
        self.accepted = 0
        self.rejected_requests: set[int] = set()
        self.local_rejections = 0
        self.messages_sent = 0
        self.messages_lost = 0
        self.attack_packets = 0
        self.attack_dropped = 0
        self.attack_to_controller = 0
        self.packet_ins = 0
        self.queue = 0.0
        self._queue_t = 0.0
        self.round_open = False
        self.failed_rounds = 0
        self.last_update_commit: Optional[float] = None
        self._rejected_seen = 0
        self._request_tx: dict[int, int] = {}  # tx id -> request id
        self._lat_cursor = 0
        self.block_filter_at: dict[str, float] = {}
        self._requests_made = 0

    # --- transport --------------------------------------------------------

    def send(self, src: str, dst: str, msg: Any) -> None:
        self.messages_sent += 1
        # ledger notices ride the reliable consensus channel; protocol traffic may be lost
        if not isinstance(msg, BlockNotice) and self.cfg.protocol.loss > 0:
            if self.rng_loss.random() < self.cfg.protocol.loss:
                self.messages_lost += 1
                return
        self.engine.after(self.topo.latency(src, dst), "deliver", self._deliver, src, dst, msg)

    def _deliver(self, src: str, dst: str, msg: Any) -> None:
        if self.keep_trace:
            version, digest = message_version_hash(msg)
            self.trace_rows.append((self.engine.now, src, dst, message_type(msg), version, digest.hex()[:8]))
        if isinstance(msg, FlowMod):
            agent = self.agents[dst]
            if msg.table.version > agent.table.version:
                agent.replicas[dst] = msg.table
            return
        self.agents[dst].on_message(src, msg)

    # --- ledger rounds ----------------------------------------------------

    def _tx(self, kind: TxKind, issuer: str, payload) -> Transaction:
        return Transaction(next(self._tx_ids), kind, issuer, payload, self.engine.now)

    def submit(self, tx: Transaction) -> None:
        self.ledger.submit(tx)
        if self.model is ModelKind.openflow_sdn:
            # a single controller decides on the spot
            if not self.round_open:
                self._seal()
        elif len(self.ledger.pending) >= self.ledger.block_max and not self.round_open:
            self._seal()

    def _seal_tick(self) -> None:
        if not self.round_open:
            self._seal()
        if self.model is ModelKind.public_bc_sdn:
            nxt = self.rng_pow.expovariate(1 / self.cal.t_pow)
        else:
            nxt = self.cfg.ledger.block_interval
        self.engine.after(nxt, "seal_tick", self._seal_tick)

    def _seal(self) -> None:
        now = self.engine.now
        proposer = self.ledger.proposer_for()
        if proposer == self.greedy:
            candidate = self._greedy_candidate(now, proposer)
        else:
            candidate = seal_block(self.ledger, now, proposer)
            self._count_ledger_rejections()
        if candidate is None:
            return
        self.round_open = True
        delay = self.quorum_round if self.model is not ModelKind.openflow_sdn else 0.0
        self.engine.after(delay, "seal_tick", self._commit, candidate)

    def _greedy_candidate(self, now: float, proposer: str) -> Optional[Block]:
        # a greedy proposer packs everything it holds without validating
        if not self.ledger.seal_due(now):
            return None
        index = len(self.ledger.chain)
        return Block(index, self.ledger.tip.digest, float(now), tuple(self.ledger.pending), proposer)

    def _commit(self, candidate: Block) -> None:
        self.round_open = False
        ok = validate_candidate(self.ledger, candidate)
        votes = {c for c in self.controllers if ok or c == self.greedy}
        d = vote_and_append(self.ledger, candidate, votes)
        if not d:
            log.debug("round %d by %s failed: %s", candidate.index, candidate.proposer, d)
            self.failed_rounds += 1
            self.ledger.view += 1
            self._seal()
            return
        self._on_block(self.ledger.tip)

    def _on_block(self, block: Block) -> None:
        now = self.engine.now
        versions = []
        for tx in block.transactions:
            if tx.kind is TxKind.LoadAdmit:
                self.accepted += 1
                task = self.ledger.state.loads[tx.payload.device].find(tx.payload.request_id)
                if task is not None:
                    end = max(task.end_time, now)
                    self.engine.schedule(end, "task_end", self._release, tx.payload, tx.issuer)
            elif tx.kind is TxKind.FlowRuleUpdate:
                sw = tx.payload.switch_id
                versions.append((sw, self.ledger.state.flow_tables[sw].version))
        if versions:
            self.last_update_commit = now
            versions = sorted(dict(versions).items())
            if self.model is ModelKind.openflow_sdn:
                for sw, _v in versions:
                    home = self.nearest_controllers[sw][0]
                    self.send(home, sw, FlowMod(self.ledger.state.flow_tables[sw]))
            else:
                notice = BlockNotice(block.index, tuple(versions))
                for sw in self.switches:
                    self.send(block.proposer, sw, notice)

    def _count_ledger_rejections(self) -> None:
        for tx, _reason in self.ledger.rejected[self._rejected_seen:]:
            rid = self._request_tx.get(tx.id)
            if rid is not None:
                self.rejected_requests.add(rid)
        self._rejected_seen = len(self.ledger.rejected)

    def _release(self, payload: LoadAdmitPayload, server: str) -> None:
        self.submit(self._tx(TxKind.LoadRelease, server, LoadReleasePayload(payload.request_id, payload.device)))

    # --- workloads --------------------------------------------------------

    def _next_request(self) -> None:
        limit = self.cfg.workload.max_requests
        if limit is not None and self._requests_made >= limit:
            return
        self._requests_made += 1
        rng = self.rng_req
        mix = self.request_mix[bisect_right(self.mix_cum, rng.random() * self.mix_cum[-1])]
        now = self.engine.now
        req = AccessRequest(mix.user, mix.device, mix.task, now, next(self._req_ids))
        server = self.device_server[req.device]
        state = self.ledger.state
        decision = evaluate_request(req, state)
        if server == self.greedy:
            # approves everything locally and leaves the checks to the quorum
            self.audit.append(AuditRow.of(req, Decision.accept(decision.detail if decision else "unchecked")))
            self._submit_request(req, server, decision.detail if decision else "")
        else:
            local = check_admission(req, state) if decision else decision
            if local:
                self.audit.append(AuditRow.of(req, decision))
                self._submit_request(req, server, decision.detail)
            else:
                self.audit.append(AuditRow.of(req, local))
                self.local_rejections += 1
                self.rejected_requests.add(req.request_id)
        self.engine.after(rng.expovariate(self.cfg.workload.request_rate), "timer", self._next_request)

    def _submit_request(self, req: AccessRequest, server: str, policy_id: str) -> None:
        grant = self._tx(TxKind.AccessGrant, server,
                         AccessGrantPayload(req.request_id, req.user, req.device, req.task, policy_id))
        admit = self._tx(TxKind.LoadAdmit, server, LoadAdmitPayload(req.request_id, req.user, req.device, req.task))
        self._request_tx[grant.id] = req.request_id
        self._request_tx[admit.id] = req.request_id
        self.submit(grant)
        self.submit(admit)

    def _flow_update(self, spec) -> None:
        sw = spec.switch
        pending = sum(1 for tx in self.ledger.pending
                      if tx.kind is TxKind.FlowRuleUpdate and tx.payload.switch_id == sw)
        base = self.ledger.state.flow_tables[sw].version + pending
        ops = [FlowOp.add(parse_entry(line)) for line in spec.add] + [FlowOp.delete(i) for i in spec.delete]
        self.submit(self._tx(TxKind.FlowRuleUpdate, spec.issuer, FlowRuleUpdatePayload(sw, base, tuple(ops))))

    def _transfer(self, spec) -> None:
        payload = RightTransferPayload(spec.policy, spec.from_user, spec.to_user)
        self.submit(self._tx(TxKind.RightTransfer, spec.from_user, payload))

    def _drain(self) -> None:
        now = self.engine.now
        self.queue = max(0.0, self.queue - self.cal.controller_service * (now - self._queue_t))
        self._queue_t = now

    def _packet_in(self) -> None:
        now = self.engine.now
        self.packet_ins += 1
        self._drain()
        self.queue += 1
        rng = self.rng_pin
        sw = self.switches[int(rng.random() * len(self.switches))]
        if self.model is ModelKind.openflow_sdn:
            peer = self.nearest_controllers[sw][0]
        else:
            peer = self.ledger.proposer_for()
        rtt = 2 * self.topo.latency(sw, peer)
        lat = confirmation_latency(self.model, self.cfg.workload.packet_in_rate, rng, self.cal, rtt,
                                   self.quorum_round)
        self.latencies.append((now, lat))
        self.engine.after(rng.expovariate(self.cfg.workload.packet_in_rate), "packet_arrival", self._packet_in)

    def _attack(self, src: str, rate: float, rng, packet: Packet, table_sw: str) -> None:
        now = self.engine.now
        if now >= self.cfg.attack.stop:
            return
        self.attack_packets += 1
        result = match_packet(self.agents[table_sw].table, packet)
        filtered = packet.ip_src not in self.ledger.state.host_ips
        if self.model is ModelKind.public_bc_sdn:
            filtered = filtered and now >= self.block_filter_at[src]
        elif self.model is ModelKind.openflow_sdn:
            filtered = False
        if filtered:
            self.attack_dropped += 1
        elif result is TableMiss:
            self.attack_to_controller += 1
            self._drain()
            self.queue += 1
        self.engine.after(rng.expovariate(rate), "packet_arrival", self._attack, src, rate, rng, packet, table_sw)

    # --- sampling ---------------------------------------------------------

    def _unconfirmed_fraction(self, now: float) -> float:
        if not self.block_filter_at:
            return 0.0
        return sum(1 for t in self.block_filter_at.values() if now < t) / len(self.block_filter_at)

    def goodput(self, now: float) -> float:
        a = self.cfg.attack
        offered = min(self.cfg.workload.legit_rate_bps, self.cal.capacity_bps)
        if offered <= 0:
            return 0.0
        rate = a.flood_rate if a.start <= now < a.stop else 0.0
        if rate <= 0:
            return offered
        unconfirmed = self._unconfirmed_fraction(now) if self.model is ModelKind.public_bc_sdn else None
        model = bandwidth_model(self.model, rate, now - a.start, self.cal, unconfirmed)
        return min(offered, model)

    def _sample(self) -> None:
        now = self.engine.now
        self._drain()
        start = self._lat_cursor
        end = start
        while end < len(self.latencies) and self.latencies[end][0] <= now:
            end += 1
        window = [lat for _, lat in self.latencies[start:end]]
        self._lat_cursor = end
        self._count_ledger_rejections()
        self.samples.append(Sample(
            now,
            self.goodput(now),
            sum(window) / len(window) if window else None,
            self.queue,
            self.accepted,
            len(self.rejected_requests),
        ))

    # --- driver -----------------------------------------------------------

    def _schedule_initial(self) -> None:
        cfg = self.cfg
        eng = self.engine
        end = cfg.run.end_time
        n = int(math.floor(end / cfg.run.sample_interval + 1e-9))
        for k in range(n + 1):
            eng.schedule(k * cfg.run.sample_interval, "sample", self._sample)
        first = cfg.ledger.block_interval
        if self.model is ModelKind.public_bc_sdn:
            first = self.rng_pow.expovariate(1 / self.cal.t_pow)
        if self.model is not ModelKind.openflow_sdn:
            eng.schedule(first, "seal_tick", self._seal_tick)
        for spec in cfg.workload.flow_updates:
            eng.schedule(spec.time, "timer", self._flow_update, spec)
        for spec in cfg.workload.transfers:
            eng.schedule(spec.time, "timer", self._transfer, spec)
        if cfg.workload.request_rate > 0 and self.request_mix:
            eng.schedule(self.rng_req.expovariate(cfg.workload.request_rate), "timer", self._next_request)
        if cfg.workload.packet_in_rate > 0:
            eng.schedule(self.rng_pin.expovariate(cfg.workload.packet_in_rate), "packet_arrival", self._packet_in)
        a = cfg.attack
        if a.flood_rate > 0 and a.sources:
            hosts = {h.id: h for h in cfg.topology.attackers}
            rate = a.flood_rate / len(a.sources)
            for src in a.sources:
                rng = derive_rng(self.seed, f"attack:{src}")
                pkt = Packet(ip_src=hosts[src].ip, ip_dst=a.target, size_bytes=a.packet_size, cls="attack")
                eng.schedule(a.start + rng.expovariate(rate), "packet_arrival", self._attack,
                             src, rate, rng, pkt, hosts[src].switch)
                # public chains install the blocking rule only after N confirmations
                pow_rng = derive_rng(self.seed, f"confirm:{src}")
                self.block_filter_at[src] = a.start + sum(
                    pow_rng.expovariate(1 / self.cal.t_pow) for _ in range(self.cal.n_conf))

    def execute(self) -> MetricsReport:
        self._schedule_initial()
        self.engine.run(self.cfg.run.end_time)
        self._count_ledger_rejections()
        return self._report()

    def convergence(self) -> dict[str, Any]:
        lagging = sorted(s for s in self.switches
                         if self.agents[s].table.version < self.ledger.state.flow_tables[s].version)
        last = 0.0
        for s in self.switches:
            adoptions = self.agents[s].adoptions
            if adoptions:
                last = max(last, adoptions[-1].time)
        return {
            "converged": not lagging,
            "lagging": lagging,
            "last_adoption": last,
            "max_attempts": max((self.agents[s].attempts for s in self.switches), default=0),
        }

    def _report(self) -> MetricsReport:
        cfg = self.cfg
        end = cfg.run.end_time
        good = [s.goodput_bps for s in self.samples]
        steady = [s.goodput_bps for s in self.samples if s.t > 0.75 * end] or good
        lats = [lat for _, lat in self.latencies]
        guard = greedy_server_guard(self.ledger, self.greedy)
        conv = self.convergence()
        summary: dict[str, Any] = {
            "scenario": cfg.name,
            "model": self.model.value,
            "seed": self.seed,
            "goodput_mean_bps": sum(good) / len(good) if good else 0.0,
            "goodput_steady_bps": sum(steady) / len(steady) if steady else 0.0,
            "update_latency_mean_s": sum(lats) / len(lats) if lats else None,
            "update_samples": len(lats),
            "accepted": self.accepted,
            "rejected": len(self.rejected_requests),
            "local_rejections": self.local_rejections,
            "ledger_rejections": len(self.ledger.rejected),
            "failed_rounds": self.failed_rounds,
            "attack_packets": self.attack_packets,
            "attack_dropped": self.attack_dropped,
            "attack_to_controller": self.attack_to_controller,
            "packet_ins": self.packet_ins,
            "messages_sent": self.messages_sent,
            "messages_lost": self.messages_lost,
            "chain_height": self.ledger.height,
            "state_digest": state_digest(self.ledger.state).hex(),
            "capacity_violations": guard.violations,
            "greedy_attempts": guard.greedy_attempts,
            "greedy_rejections": guard.greedy_rejections,
            "peak_load": ";".join(f"{d}={v}" for d, v in sorted(guard.peak_load.items())),
            "last_update_commit": self.last_update_commit,
            "converged": conv["converged"],
            "last_adoption": conv["last_adoption"],
            "max_attempts": conv["max_attempts"],
        }
        return MetricsReport(cfg.name, self.model, self.seed, self.samples, summary, lats,
                             list(self.ledger.chain), self.trace_rows, self.audit)


def run(scenario: "ScenarioConfig", seed: int, model: ModelKind | str | None = None, trace: bool = False) -> MetricsReport:
    """Execute one (scenario, model, seed) run; defaults to the scenario's first model."""
    if model is None:
        model = scenario.run.models[0]
    return Simulation(scenario, model, seed, trace).execute()
